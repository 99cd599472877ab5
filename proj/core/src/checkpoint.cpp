// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "geneses/error.hpp"

namespace geneses::ckpt {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void blobs(const std::vector<Blob>& bs) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(bs.size()));
    for (const auto& b : bs) {
      str(b.name);
      pod<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
      for (auto d : b.shape) pod<std::int64_t>(d);
      pod<std::uint64_t>(b.values.size());
      raw(b.values.data(), b.values.size() * sizeof(float));
    }
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, std::string path)
      : bytes_(bytes), end_(end), path_(std::move(path)) {}

  template <typename V>
  V pod() {
    V v;
    take(&v, sizeof(V));
    return v;
  }
  void take(void* out, std::size_t n) {
    if (n > end_ - pos_) fail(Errc::checkpoint_corrupt, path_ + ": truncated checkpoint");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  std::vector<Blob> blobs() {
    const auto n = pod<std::uint32_t>();
    std::vector<Blob> out;
    for (std::uint32_t i = 0; i < n; ++i) {
      Blob b;
      b.name = str();
      const auto rank = pod<std::uint32_t>();
      if (rank > 16) fail(Errc::checkpoint_corrupt, path_ + ": implausible rank for blob '" + b.name + "'");
      for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(pod<std::int64_t>());
      const auto count = pod<std::uint64_t>();
      if (count > (end_ - pos_) / sizeof(float) || static_cast<std::int64_t>(count) != shape_numel(b.shape))
        fail(Errc::checkpoint_corrupt, path_ + ": bad size for blob '" + b.name + "'");
      b.values.resize(count);
      take(b.values.data(), count * sizeof(float));
      out.push_back(std::move(b));
    }
    return out;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t checksum(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

const Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : parameters)
    if (b.name == name) return &b;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(ckpt.version);
  w.str(ckpt.meta.dump());
  w.blobs(ckpt.parameters);
  w.blobs(ckpt.optimizer);
  w.pod<std::int64_t>(ckpt.step);
  w.pod<std::uint64_t>(ckpt.rng.key());
  w.pod<std::uint64_t>(ckpt.rng.counter());
  w.pod<std::uint32_t>(checksum(w.bytes().data(), w.bytes().size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io, "cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    require(out.good(), Errc::io, "failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto name = path.string();
  require(std::filesystem::is_regular_file(path), Errc::checkpoint_missing, "checkpoint not found: " + name);
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot read checkpoint " + name);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= sizeof(kMagic) + 2 * sizeof(std::uint32_t), Errc::checkpoint_corrupt,
          name + ": truncated checkpoint");
  require(std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin()), Errc::checkpoint_corrupt,
          name + ": not a checkpoint (bad magic)");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  require(version == kVersion, Errc::checkpoint_version,
          name + ": checkpoint format version " + std::to_string(version) + ", expected " +
              std::to_string(kVersion));
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  require(stored == checksum(bytes.data(), body), Errc::checkpoint_corrupt, name + ": checksum mismatch");

  Reader r(bytes, body, name);
  char magic[sizeof(kMagic)];
  r.take(magic, sizeof(magic));
  Checkpoint c;
  c.version = r.pod<std::uint32_t>();
  try {
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::checkpoint_corrupt, name + ": bad metadata: " + e.what());
  }
  c.parameters = r.blobs();
  c.optimizer = r.blobs();
  c.step = r.pod<std::int64_t>();
  const auto key = r.pod<std::uint64_t>();
  const auto counter = r.pod<std::uint64_t>();
  c.rng = Rng(key, counter);
  require(r.done(), Errc::checkpoint_corrupt, name + ": trailing bytes");
  return c;
}

std::vector<Blob> capture(const nn::ParameterList<float>& params) {
  std::vector<Blob> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    out.push_back(Blob{p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

void restore(const nn::ParameterList<float>& params, const std::vector<Blob>& blobs) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    require(i < blobs.size(), Errc::invalid_shape, "checkpoint has no blob for parameter '" + p.name + "'");
    const auto& b = blobs[i];
    require(b.name == p.name, Errc::invalid_shape,
            "checkpoint blob '" + b.name + "' found where '" + p.name + "' was expected");
    require(b.shape == p.tensor.shape(), Errc::invalid_shape,
            "checkpoint blob '" + b.name + "' has shape " + shape_str(b.shape) + ", model expects " +
                shape_str(p.tensor.shape()));
  }
  require(blobs.size() == params.size(), Errc::invalid_shape,
          "checkpoint has extra blob '" + (blobs.size() > params.size() ? blobs[params.size()].name : "") + "'");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float> t = params[i].tensor;
    std::copy(blobs[i].values.begin(), blobs[i].values.end(), t.mutable_data().begin());
  }
}

std::vector<Blob> capture_optimizer(nn::AdamW<float>& opt) {
  std::vector<Blob> out;
  const auto& params = opt.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const auto& [suffix, t] : {std::pair<const char*, const Tensor<float>*>{".m", &opt.first_moments()[i]},
                                    {".v", &opt.second_moments()[i]}}) {
      const auto d = t->data();
      out.push_back(Blob{params[i].name + suffix, t->shape(), std::vector<float>(d.begin(), d.end())});
    }
  }
  return out;
}

void restore_optimizer(nn::AdamW<float>& opt, const std::vector<Blob>& blobs, std::int64_t step) {
  const auto& params = opt.parameters();
  require(blobs.size() == 2 * params.size(), Errc::invalid_shape,
          "optimizer state has " + std::to_string(blobs.size()) + " blobs, expected " +
              std::to_string(2 * params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int k = 0; k < 2; ++k) {
      const auto& b = blobs[2 * i + static_cast<std::size_t>(k)];
      Tensor<float>& t = k == 0 ? opt.first_moments()[i] : opt.second_moments()[i];
      const std::string want = params[i].name + (k == 0 ? ".m" : ".v");
      require(b.name == want && b.shape == t.shape(), Errc::invalid_shape,
              "optimizer blob '" + b.name + "' does not match '" + want + "' " + shape_str(t.shape()));
      std::copy(b.values.begin(), b.values.end(), t.mutable_data().begin());
    }
  }
  opt.set_step_count(step);
}

}  // namespace geneses::ckpt

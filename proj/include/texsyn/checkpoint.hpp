#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "texsyn/common.hpp"

namespace texsyn {

// Checkpoint layout: a directory holding `manifest.json` (version, metadata,
// tensor index with byte offsets) and `weights.bin` (little-endian float32,
// row-major, concatenated in index order). Round-trips are bit-exact.
constexpr int kCheckpointVersion = 1;

struct TensorOut {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  const void* data = nullptr;  // MatX<S>*
  std::vector<float> staged;
};

class TensorWriter {
 public:
  template <class S>
  void add(const std::string& name, const MatX<S>& m) {
    TensorOut t;
    t.name = name;
    t.rows = m.rows();
    t.cols = m.cols();
    t.staged.resize(static_cast<size_t>(m.size()));
    // row-major staging
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.staged.data(), m.rows(), m.cols()) = m.template cast<float>();
    tensors_.push_back(std::move(t));
  }

  void write(const std::string& dir, nlohmann::json meta) const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors_) {
      index.push_back({{"name", t.name},
                       {"dtype", "f32"},
                       {"shape", {t.rows, t.cols}},
                       {"byte_offset", offset}});
      offset += t.staged.size() * sizeof(float);
    }
    meta["format_version"] = kCheckpointVersion;
    meta["tensors"] = std::move(index);
    meta["weights_bytes"] = offset;
    {
      std::ofstream f(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("checkpoint: cannot write weights.bin under " + dir);
      for (const auto& t : tensors_)
        f.write(reinterpret_cast<const char*>(t.staged.data()),
                static_cast<std::streamsize>(t.staged.size() * sizeof(float)));
      if (!f) throw IoError("checkpoint: short write to weights.bin");
    }
    std::ofstream m(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!m) throw IoError("checkpoint: cannot write manifest.json under " + dir);
    m << meta.dump(1) << "\n";
  }

 private:
  std::vector<TensorOut> tensors_;
};

class TensorReader {
 public:
  explicit TensorReader(const std::string& dir) {
    namespace fs = std::filesystem;
    {
      std::ifstream m(fs::path(dir) / "manifest.json");
      if (!m) throw IoError("checkpoint: cannot open manifest.json under " + dir);
      try {
        m >> manifest_;
      } catch (const std::exception& e) {
        throw IoError("checkpoint: corrupt manifest.json: " + std::string(e.what()));
      }
    }
    if (!manifest_.contains("format_version") ||
        manifest_["format_version"].get<int>() != kCheckpointVersion)
      throw IoError("checkpoint: unsupported format version (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    std::ifstream f(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::ate);
    if (!f) throw IoError("checkpoint: cannot open weights.bin under " + dir);
    const std::uint64_t size = static_cast<std::uint64_t>(f.tellg());
    const std::uint64_t expected = manifest_.value("weights_bytes", std::uint64_t(0));
    if (size != expected)
      throw IoError("checkpoint: weights.bin is " + std::to_string(size) + " bytes, manifest says " +
                    std::to_string(expected) + " (truncated or corrupt)");
    blob_.resize(size / sizeof(float));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(blob_.data()), static_cast<std::streamsize>(size));
    if (!f) throw IoError("checkpoint: short read from weights.bin");
    for (const auto& t : manifest_["tensors"]) {
      Entry e;
      e.rows = t["shape"][0].get<Eigen::Index>();
      e.cols = t["shape"][1].get<Eigen::Index>();
      e.offset = t["byte_offset"].get<std::uint64_t>() / sizeof(float);
      if (e.offset + static_cast<std::uint64_t>(e.rows * e.cols) > blob_.size())
        throw IoError("checkpoint: tensor " + t["name"].get<std::string>() +
                      " runs past the end of weights.bin");
      entries_[t["name"].get<std::string>()] = e;
    }
  }

  const nlohmann::json& manifest() const { return manifest_; }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  template <class S>
  MatX<S> get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: missing tensor " + name);
    const Entry& e = it->second;
    if (e.rows != rows || e.cols != cols)
      throw IoError("checkpoint: tensor " + name + " has shape " + std::to_string(e.rows) + "x" +
                    std::to_string(e.cols) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
    return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
               blob_.data() + e.offset, rows, cols)
        .cast<S>();
  }

 private:
  struct Entry {
    Eigen::Index rows = 0, cols = 0;
    std::uint64_t offset = 0;
  };
  nlohmann::json manifest_;
  std::vector<float> blob_;
  std::map<std::string, Entry> entries_;
};

}  // namespace texsyn

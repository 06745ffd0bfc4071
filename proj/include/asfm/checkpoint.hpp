// Copyright 2026 The activesfm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "asfm/common.hpp"

namespace asfm {

// Checkpoints are a flat list of named raw tensors behind a versioned
// header. Loading restores the exact bytes, which makes resume bit-exact.
class TensorFile {
 public:
  template <typename S>
  void put(const std::string& name, const MatX<S>& m) {
    Blob b;
    b.rows = m.rows();
    b.cols = m.cols();
    b.data.resize(sizeof(S) * m.size());
    std::memcpy(b.data.data(), m.data(), b.data.size());
    blobs_[name] = std::move(b);
  }
  template <typename S>
  void put(const std::string& name, const VecX<S>& v) {
    put<S>(name, MatX<S>(v));
  }
  template <typename S>
  void put_scalar(const std::string& name, S v) {
    MatX<S> m(1, 1);
    m(0, 0) = v;
    put(name, m);
  }

  bool has(const std::string& name) const { return blobs_.count(name) > 0; }

  template <typename S>
  MatX<S> get(const std::string& name) const {
    auto it = blobs_.find(name);
    ASFM_CHECK(it != blobs_.end(), "checkpoint: missing tensor " + name);
    const Blob& b = it->second;
    ASFM_CHECK(b.data.size() == sizeof(S) * b.rows * b.cols,
               "checkpoint: scalar width mismatch for " + name);
    MatX<S> m(b.rows, b.cols);
    std::memcpy(m.data(), b.data.data(), b.data.size());
    return m;
  }
  template <typename S>
  S get_scalar(const std::string& name) const {
    return get<S>(name)(0, 0);
  }

  void save(const std::string& path, uint8_t scalar_size) const {
    std::ofstream out(path, std::ios::binary);
    ASFM_CHECK(out.good(), "checkpoint: cannot open " + path + " for writing");
    const char magic[8] = {'A', 'S', 'F', 'M', 'C', 'K', 'P', '1'};
    out.write(magic, 8);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&scalar_size), 1);
    const uint64_t count = blobs_.size();
    out.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [name, b] : blobs_) {
      const uint32_t len = static_cast<uint32_t>(name.size());
      out.write(reinterpret_cast<const char*>(&len), 4);
      out.write(name.data(), len);
      out.write(reinterpret_cast<const char*>(&b.rows), 8);
      out.write(reinterpret_cast<const char*>(&b.cols), 8);
      const uint64_t bytes = b.data.size();
      out.write(reinterpret_cast<const char*>(&bytes), 8);
      out.write(b.data.data(), bytes);
    }
    ASFM_CHECK(out.good(), "checkpoint: write failed for " + path);
  }

  uint8_t load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    ASFM_CHECK(in.good(), "checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    ASFM_CHECK(std::memcmp(magic, "ASFMCKP1", 8) == 0,
               "checkpoint: bad magic in " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    ASFM_CHECK(version == 1, "checkpoint: unsupported version");
    uint8_t scalar_size = 0;
    in.read(reinterpret_cast<char*>(&scalar_size), 1);
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    blobs_.clear();
    for (uint64_t i = 0; i < count; ++i) {
      uint32_t len = 0;
      in.read(reinterpret_cast<char*>(&len), 4);
      std::string name(len, '\0');
      in.read(name.data(), len);
      Blob b;
      in.read(reinterpret_cast<char*>(&b.rows), 8);
      in.read(reinterpret_cast<char*>(&b.cols), 8);
      uint64_t bytes = 0;
      in.read(reinterpret_cast<char*>(&bytes), 8);
      b.data.resize(bytes);
      in.read(b.data.data(), bytes);
      ASFM_CHECK(in.good(), "checkpoint: truncated file " + path);
      blobs_[name] = std::move(b);
    }
    return scalar_size;
  }

 private:
  struct Blob {
    uint64_t rows = 0, cols = 0;
    std::vector<char> data;
  };
  std::map<std::string, Blob> blobs_;
};

}  // namespace asfm

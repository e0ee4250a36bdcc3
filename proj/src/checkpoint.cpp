// Copyright 2026 The dmx Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dmx/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <iomanip>
#include <map>
#include <sstream>

#include "dmx/error.hpp"

namespace dmx {

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  template <typename T>
  T get() {
    unsigned char bytes[sizeof(T)];
    read(bytes, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(name_ + ": truncated checkpoint at byte offset " + std::to_string(offset_ + in_.gcount()));
    }
    offset_ += n;
  }
  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t offset_ = 0;
};

}  // namespace

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ParamList<S>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(S));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) put<std::uint64_t>(out, e);
    for (S v : p.tensor.data()) put<S>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename S>
ParamList<S> read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + ": bad magic, not a dmx checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const auto width = r.get<std::uint32_t>();
  if (width != sizeof(S)) {
    throw FormatError(path.string() + ": checkpoint stores " + std::to_string(width) + "-byte scalars, expected " +
                      std::to_string(sizeof(S)));
  }
  const auto count = r.get<std::uint32_t>();
  ParamList<S> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint32_t>();
    if (len > (1U << 16)) throw FormatError(path.string() + ": implausible name length at byte offset " +
                                            std::to_string(r.offset() - 4));
    std::string name(len, '\0');
    r.read(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw FormatError(path.string() + ": implausible rank for tensor '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor<S> tensor(shape);
    for (auto& v : tensor.data()) v = r.get<S>();
    out.push_back({std::move(name), std::move(tensor)});
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after byte offset " + std::to_string(r.offset()));
  }
  return out;
}

template <typename S>
void load_checkpoint(const std::filesystem::path& path, const ParamList<S>& params) {
  const auto stored = read_checkpoint<S>(path);
  std::map<std::string, const Tensor<S>*> by_name;
  for (const auto& p : stored) by_name[p.name] = &p.tensor;
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw ConfigError("architecture mismatch: model tensor '" + p.name + "' is not in checkpoint " + path.string());
    }
    if (it->second->shape() != p.tensor.shape()) {
      throw ConfigError("architecture mismatch: tensor '" + p.name + "' has shape " + to_string(it->second->shape()) +
                        " in the checkpoint but " + to_string(p.tensor.shape()) + " in the model");
    }
  }
  if (stored.size() != params.size()) {
    for (const auto& s : stored) {
      const bool known = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.name == s.name; });
      if (!known) throw ConfigError("architecture mismatch: checkpoint tensor '" + s.name + "' is not in the model");
    }
  }
  for (const auto& p : params) {
    Tensor<S> handle = p.tensor;  // shares storage with the model
    auto dst = handle.data();
    const auto src = by_name[p.name]->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const ParamList<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamList<double>&);
template ParamList<float> read_checkpoint<float>(const std::filesystem::path&);
template ParamList<double> read_checkpoint<double>(const std::filesystem::path&);
template void load_checkpoint<float>(const std::filesystem::path&, const ParamList<float>&);
template void load_checkpoint<double>(const std::filesystem::path&, const ParamList<double>&);

std::string format_metrics_row(const MetricsRow& row) {
  std::ostringstream os;
  os << row.epoch << ',' << std::setprecision(9) << row.train_loss << ',' << row.train_acc << ',' << row.test_acc << ','
     << std::fixed << std::setprecision(1) << row.wall_ms;
  return os.str();
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw IoError("cannot write metrics " + path.string());
  out_ << kMetricsHeader << '\n' << std::flush;
}

void MetricsWriter::append(const MetricsRow& row) { out_ << format_metrics_row(row) << '\n' << std::flush; }

}  // namespace dmx

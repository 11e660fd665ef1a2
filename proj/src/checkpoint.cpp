// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace teamoe {

namespace {

constexpr std::array<char, 8> kMagic{'T', 'E', 'A', 'M', 'O', 'E', 'C', 'K'};
constexpr std::uint64_t kMaxName = 1 << 16;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

std::string get_string(std::istream& is, std::uint64_t length, const char* what) {
  std::string s(length, '\0');
  if (length && !is.read(s.data(), static_cast<std::streamsize>(length))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const AdaptedModel& model, const RunConfig& config) {
  Checkpoint ckpt;
  ckpt.seed = config.seed;
  ckpt.config_json = dump_run_config(config);
  for (const auto& [name, t] : named_tensors(model)) ckpt.tensors.push_back({name, t.shape(), t.to_vector()});
  return ckpt;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, ckpt.version);
  put<std::uint64_t>(os, ckpt.seed);
  put<std::uint64_t>(os, ckpt.config_json.size());
  os.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (static_cast<Index>(t.data.size()) != shape_numel(t.shape)) {
      throw CheckpointError("tensor " + t.name + ": payload does not match shape " + shape_str(t.shape));
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (double v : t.data) put<double>(os, v);
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw CheckpointError("not a teamoe checkpoint");
  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(is, "version");
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(ckpt.version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  ckpt.seed = get<std::uint64_t>(is, "seed");
  const auto config_len = get<std::uint64_t>(is, "config length");
  if (config_len > (std::uint64_t{1} << 24)) throw CheckpointError("implausible config length");
  ckpt.config_json = get_string(is, config_len, "config");
  const auto count = get<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto name_len = get<std::uint32_t>(is, "name length");
    if (name_len > kMaxName) throw CheckpointError("implausible tensor name length");
    t.name = get_string(is, name_len, "tensor name");
    const auto rank = get<std::uint32_t>(is, "rank");
    if (rank > 8) throw CheckpointError("tensor " + t.name + ": implausible rank " + std::to_string(rank));
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(is, "dimension");
      if (d == 0 || d > kMaxElements) throw CheckpointError("tensor " + t.name + ": bad dimension");
      numel *= d;
      if (numel > kMaxElements) throw CheckpointError("tensor " + t.name + ": too many elements");
      t.shape.push_back(static_cast<Index>(d));
    }
    t.data.resize(numel);
    for (auto& v : t.data) v = get<double>(is, "payload");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(in);
}

AdaptedModel restore_model(const Checkpoint& ckpt, RunConfig* config_out) {
  RunConfig config = parse_run_config(ckpt.config_json);
  validate(config);
  TrainConfig tc = train_config(config);
  AdaptedModel model = make_model(tc.model, derive_seed(config.seed, seed_stream::kInit));

  std::map<std::string, const StoredTensor*> stored;
  for (const auto& t : ckpt.tensors) stored.emplace(t.name, &t);
  auto named = named_tensors(model);
  if (named.size() != stored.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                          std::to_string(named.size()));
  }
  for (auto& [name, tensor] : named) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second->shape != tensor.shape()) {
      throw CheckpointError("tensor " + name + ": stored shape " + shape_str(it->second->shape) + ", model expects " +
                            shape_str(tensor.shape()));
    }
    auto& v = tensor.mutable_value();
    std::copy(it->second->data.begin(), it->second->data.end(), v.data());
  }
  if (config_out) *config_out = std::move(config);
  return model;
}

}  // namespace teamoe

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vspcn/binary_io.hpp"
#include "vspcn/config.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/optimizer.hpp"
#include "vspcn/params.hpp"

namespace vspcn {

inline constexpr std::string_view kCheckpointMagic = "VSPC";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;  // echo of the run configuration
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  ModelParams<double> params;
  AdamState optimizer;
};

/// Payload layout (little-endian, after the container header):
///   u32 length + bytes   config echo
///   u64 epoch, u64 step
///   u32 tensor count, then per parameter: u32 length + name bytes, tensor
///   per parameter again, same order: u64 step count, tensor m, tensor v
inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.str(ck.config_text);
  w.u64(ck.epoch);
  w.u64(ck.step);
  std::uint32_t count = 0;
  visit_slots([&count](const std::string&, Decay, const Tensor<double>&) { ++count; }, ck.params);
  w.u32(count);
  visit_slots(
      [&w](const std::string& name, Decay, const Tensor<double>& t) {
        w.str(name);
        w.tensor(t);
      },
      ck.params);
  visit_slots(
      [&w](const std::string&, Decay, const std::uint64_t& step, const Tensor<double>& m, const Tensor<double>& v) {
        w.u64(step);
        w.tensor(m);
        w.tensor(v);
      },
      ck.optimizer.steps, ck.optimizer.m, ck.optimizer.v);
  return io::seal_container(kCheckpointMagic, kCheckpointVersion, w.bytes());
}

/// Reads a checkpoint and checks every tensor against the shapes implied by
/// `cfg`. A mismatch names the offending tensor.
inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const RunConfig& cfg) {
  auto r = io::open_container(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  Checkpoint ck;
  ck.config_text = r.str();
  ck.epoch = r.u64();
  ck.step = r.u64();
  const auto expected = init_params<double>(cfg.model, cfg.data.n_attr, cfg.data.n_seen, 0);
  std::uint32_t expected_count = 0;
  visit_slots([&](const std::string&, Decay, const Tensor<double>&) { ++expected_count; }, expected);
  const std::uint32_t count = r.u32();
  if (count != expected_count) {
    throw ShapeMismatchError("checkpoint: holds " + std::to_string(count) + " tensors, config expects " +
                             std::to_string(expected_count));
  }
  auto check = [](const std::string& name, const Tensor<double>& got, const Tensor<double>& want) {
    if (got.shape() != want.shape()) {
      throw ShapeMismatchError("checkpoint: tensor '" + name + "' has shape " + shape_string(got.shape()) +
                               ", config expects " + shape_string(want.shape()));
    }
  };
  ck.params = like<Tensor<double>>(expected);
  visit_slots(
      [&](const std::string& name, Decay, Tensor<double>& dst, const Tensor<double>& want) {
        const std::string found = r.str();
        if (found != name) {
          throw ShapeMismatchError("checkpoint: expected tensor '" + name + "', found '" + found + "'");
        }
        dst = r.tensor(name);
        check(name, dst, want);
      },
      ck.params, expected);
  ck.optimizer = init_adam_state(expected);
  visit_slots(
      [&](const std::string& name, Decay, std::uint64_t& step, Tensor<double>& m, Tensor<double>& v,
          const Tensor<double>& want) {
        step = r.u64();
        m = r.tensor(name + ".m");
        v = r.tensor(name + ".v");
        check(name + ".m", m, want);
        check(name + ".v", v, want);
      },
      ck.optimizer.steps, ck.optimizer.m, ck.optimizer.v, expected);
  if (r.remaining() != 0) throw FormatError("checkpoint: unexpected bytes after optimizer state");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path, const RunConfig& cfg) {
  return deserialize_checkpoint(io::read_file(path), cfg);
}

/// The configuration echoed inside a checkpoint, applied over defaults.
inline RunConfig checkpoint_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  auto r = io::open_container(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  RunConfig cfg;
  apply_config_text(cfg, r.str(), path);
  return cfg;
}

}  // namespace vspcn

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/config.hpp"
#include "pse/error.hpp"
#include "pse/params.hpp"

namespace pse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  TrainConfig config;
  std::size_t trained_epochs = 0;
  ParamStore<double> params;
  AdamState<double> adam;
  std::array<std::uint64_t, 2> rng_state{};
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw data_error("checkpoint: truncated reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
  const std::uint64_t lo = get_u32(in, what);
  const std::uint64_t hi = get_u32(in, what);
  return lo | (hi << 32);
}

/// name + rank + extents + float32 payload.
inline void put_record(std::ostream& os, const std::string& name, const Shape& shape,
                       const std::vector<double>& values) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : values) {
    const float f = static_cast<float>(v);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

struct RawRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline RawRecord get_record(std::istream& in) {
  RawRecord rec;
  const std::uint32_t name_len = get_u32(in, "record name length");
  if (name_len > 4096) throw data_error("checkpoint: implausible name length");
  rec.name.resize(name_len);
  if (!in.read(rec.name.data(), name_len))
    throw data_error("checkpoint: truncated record name");
  const std::uint32_t rank = get_u32(in, "record rank");
  if (rank > 8) throw data_error("checkpoint: implausible rank for " + rec.name);
  std::size_t numel = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    rec.shape.push_back(get_u32(in, "record extent"));
    numel *= rec.shape.back();
  }
  rec.values.resize(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    float f;
    if (!in.read(reinterpret_cast<char*>(&f), 4))
      throw data_error("checkpoint: truncated values for " + rec.name);
    rec.values[i] = static_cast<double>(f);
  }
  return rec;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write " + path);

  os.write("PSE1", 4);
  detail::put_u32(os, kCheckpointVersion);

  nlohmann::json j = config_to_json(data.config);
  j["trained_epochs"] = data.trained_epochs;
  const std::string cfg_text = j.dump();
  detail::put_u32(os, static_cast<std::uint32_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  detail::put_u32(os, static_cast<std::uint32_t>(data.params.size()));
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    const auto& e = data.params.entry(i);
    detail::put_record(os, e.name, e.shape, e.value);
  }

  if (data.adam.m.size() != data.params.size())
    throw invalid_argument_error("checkpoint: optimizer state does not match params");
  detail::put_u32(os, static_cast<std::uint32_t>(2 * data.params.size() + 2));
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    const auto& e = data.params.entry(i);
    detail::put_record(os, "m:" + e.name, e.shape, data.adam.m[i]);
    detail::put_record(os, "v:" + e.name, e.shape, data.adam.v[i]);
  }
  detail::put_record(os, "t", Shape{1}, {static_cast<double>(data.adam.step)});
  detail::put_record(os, "hyper", Shape{3},
                     {data.adam.beta1, data.adam.beta2, data.adam.eps});

  detail::put_u64(os, data.rng_state[0]);
  detail::put_u64(os, data.rng_state[1]);
  if (!os) throw data_error("write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::strncmp(magic, "PSE1", 4) != 0)
    throw data_error(path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kCheckpointVersion)
    throw data_error(path + ": unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t cfg_len = detail::get_u32(in, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw data_error(path + ": truncated config");

  CheckpointData data;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg_text);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": bad config JSON: " + e.what());
  }
  data.config = config_from_json(j);
  if (j.contains("trained_epochs"))
    data.trained_epochs = j.at("trained_epochs").get<std::size_t>();

  const std::uint32_t param_count = detail::get_u32(in, "param count");
  for (std::uint32_t i = 0; i < param_count; ++i) {
    detail::RawRecord rec = detail::get_record(in);
    data.params.add(rec.name, rec.shape, std::move(rec.values));
  }

  data.adam = AdamState<double>(data.params);
  const std::uint32_t opt_count = detail::get_u32(in, "optimizer record count");
  for (std::uint32_t i = 0; i < opt_count; ++i) {
    detail::RawRecord rec = detail::get_record(in);
    if (rec.name == "t") {
      if (rec.values.size() != 1) throw data_error(path + ": malformed step record");
      data.adam.step = static_cast<std::uint64_t>(rec.values[0]);
    } else if (rec.name == "hyper") {
      if (rec.values.size() != 3) throw data_error(path + ": malformed hyper record");
      data.adam.beta1 = rec.values[0];
      data.adam.beta2 = rec.values[1];
      data.adam.eps = rec.values[2];
    } else if (rec.name.rfind("m:", 0) == 0 || rec.name.rfind("v:", 0) == 0) {
      const std::string pname = rec.name.substr(2);
      const std::size_t slot = data.params.index_of(pname);
      auto& dst = rec.name[0] == 'm' ? data.adam.m[slot] : data.adam.v[slot];
      if (rec.values.size() != dst.size())
        throw data_error(path + ": moment size mismatch for " + pname);
      dst = std::move(rec.values);
    } else {
      throw data_error(path + ": unknown optimizer record " + rec.name);
    }
  }

  data.rng_state[0] = detail::get_u64(in, "rng state");
  data.rng_state[1] = detail::get_u64(in, "rng state");
  return data;
}

}  // namespace pse

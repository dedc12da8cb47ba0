#pragma once

// Checkpoint layout:
//   <name>.json  manifest: format, config, feature config, seed, step,
//                vocab hash, dtype and the ordered tensor list (name, shape)
//   <name>.bin   every tensor's values, row-major, little-endian, in
//                manifest order, no padding
//   <name>.optim.bin (optional) first then second optimizer moments with the
//                same layout as <name>.bin

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "mucot/encoder.hpp"
#include "mucot/error.hpp"
#include "mucot/features.hpp"

namespace mucot {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"d_ffn", c.d_ffn}, {"max_positions", c.max_positions}, {"tap_layer", c.tap_layer}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ffn = j.at("d_ffn").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.tap_layer = j.at("tap_layer").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const FeatureConfig& c) {
  return {{"max_length", c.max_length}, {"doc_stride", c.doc_stride}, {"keep_unanswerable", c.keep_unanswerable}};
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j) {
  FeatureConfig c;
  c.max_length = j.at("max_length").get<std::size_t>();
  c.doc_stride = j.at("doc_stride").get<std::size_t>();
  c.keep_unanswerable = j.value("keep_unanswerable", true);
  return c;
}

struct CheckpointMeta {
  EncoderConfig encoder;
  FeatureConfig features;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t vocab_hash = 0;
  nlohmann::json extra = nlohmann::json::object();  // trainer bookkeeping
};

template <typename T>
struct Checkpoint {
  EncoderParams<T> params;
  CheckpointMeta meta;
  std::optional<std::pair<EncoderParams<T>, EncoderParams<T>>> moments;
};

namespace checkpoint_detail {

template <typename T>
void write_blob(const std::filesystem::path& path, const EncoderParams<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", path.string());
  visit_tensors(params, [&](const std::string&, const auto& t, TensorRole) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  });
  if (!out) fail(ErrorCode::io_failure, "short write to ", path.string());
}

template <typename Stored, typename T>
void read_tensors(std::ifstream& in, const std::filesystem::path& path, EncoderParams<T>& params) {
  visit_tensors(params, [&](const std::string& name, auto& t, TensorRole) {
    std::vector<Stored> buf(static_cast<std::size_t>(t.size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Stored)));
    if (!in) fail(ErrorCode::parse_failure, path.string(), ": truncated while reading ", name);
    for (std::size_t i = 0; i < buf.size(); ++i) t.data()[i] = static_cast<T>(buf[i]);
  });
}

template <typename T>
void read_blob(const std::filesystem::path& path, const std::string& dtype, EncoderParams<T>& params,
               std::size_t count = 1, EncoderParams<T>* second = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open ", path.string());
  for (std::size_t k = 0; k < count; ++k) {
    auto& target = k == 0 ? params : *second;
    if (dtype == "f32") read_tensors<float>(in, path, target);
    else if (dtype == "f64") read_tensors<double>(in, path, target);
    else fail(ErrorCode::parse_failure, path.string(), ": unknown dtype ", dtype);
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::parse_failure, path.string(), ": trailing bytes");
}

}  // namespace checkpoint_detail

inline std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  return p.replace_extension(".bin");
}

inline std::filesystem::path optim_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  return p.replace_extension(".optim.bin");
}

// Writes <dir>/<name>.json and <name>.bin (plus <name>.optim.bin when
// moments are given). Returns the manifest path.
template <typename T>
std::filesystem::path save_checkpoint(const std::filesystem::path& dir, const std::string& name,
                                      const EncoderParams<T>& params, const CheckpointMeta& meta,
                                      const EncoderParams<T>* first_moment = nullptr,
                                      const EncoderParams<T>* second_moment = nullptr) {
  std::filesystem::create_directories(dir);
  const auto manifest_path = dir / (name + ".json");
  nlohmann::ordered_json m;
  m["format"] = "mucot-checkpoint";
  m["version"] = 1;
  m["config"] = to_json(meta.encoder);
  m["feature_config"] = to_json(meta.features);
  m["seed"] = meta.seed;
  m["step"] = meta.step;
  m["vocab_hash"] = meta.vocab_hash;
  m["dtype"] = dtype_name<T>();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  visit_tensors(params, [&](const std::string& tname, const auto& t, TensorRole) {
    tensors.push_back({{"name", tname}, {"shape", {t.rows(), t.cols()}}, {"dtype", dtype_name<T>()}});
  });
  m["tensors"] = tensors;
  m["blob"] = blob_path(manifest_path).filename().string();
  const bool with_moments = first_moment && second_moment;
  if (with_moments) m["optimizer_blob"] = optim_path(manifest_path).filename().string();
  m["extra"] = meta.extra;

  checkpoint_detail::write_blob(blob_path(manifest_path), params);
  if (with_moments) {
    std::ofstream out(optim_path(manifest_path), std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot write ", optim_path(manifest_path).string());
    for (const auto* moment : {first_moment, second_moment}) {
      visit_tensors(*moment, [&](const std::string&, const auto& t, TensorRole) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
      });
    }
  }
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", manifest_path.string());
  out << m.dump(2) << '\n';
  return manifest_path;
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& manifest_path, nlohmann::json* raw = nullptr) {
  if (!std::filesystem::exists(manifest_path)) fail(ErrorCode::io_failure, "no such checkpoint: ", manifest_path.string());
  std::ifstream in(manifest_path, std::ios::binary);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    fail(ErrorCode::parse_failure, manifest_path.string(), ": ", e.what());
  }
  if (m.value("format", "") != "mucot-checkpoint") fail(ErrorCode::parse_failure, manifest_path.string(), ": not a checkpoint manifest");
  CheckpointMeta meta;
  meta.encoder = encoder_config_from_json(m.at("config"));
  meta.features = feature_config_from_json(m.at("feature_config"));
  meta.seed = m.at("seed").get<std::uint64_t>();
  meta.step = m.at("step").get<std::uint64_t>();
  meta.vocab_hash = m.at("vocab_hash").get<std::uint64_t>();
  meta.extra = m.value("extra", nlohmann::json::object());
  if (raw) *raw = std::move(m);
  return meta;
}

// Loads into precision T regardless of the stored dtype.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& manifest_path, bool with_moments = false) {
  nlohmann::json m;
  Checkpoint<T> ck;
  ck.meta = read_checkpoint_meta(manifest_path, &m);
  ck.params = EncoderParams<T>::zeros(ck.meta.encoder);
  const auto& tensors = m.at("tensors");
  std::size_t index = 0;
  visit_tensors(ck.params, [&](const std::string& name, const auto& t, TensorRole) {
    if (index >= tensors.size() || tensors[index].at("name").get<std::string>() != name ||
        tensors[index].at("shape")[0].get<Eigen::Index>() != t.rows() ||
        tensors[index].at("shape")[1].get<Eigen::Index>() != t.cols()) {
      fail(ErrorCode::shape_mismatch, manifest_path.string(), ": tensor ", index, " does not match ", name);
    }
    ++index;
  });
  if (index != tensors.size()) fail(ErrorCode::shape_mismatch, manifest_path.string(), ": unexpected tensor count");
  const auto dir = manifest_path.parent_path();
  const auto dtype = m.at("dtype").get<std::string>();
  checkpoint_detail::read_blob(dir / m.at("blob").get<std::string>(), dtype, ck.params);
  if (with_moments && m.contains("optimizer_blob")) {
    auto first = EncoderParams<T>::zeros(ck.meta.encoder);
    auto second = EncoderParams<T>::zeros(ck.meta.encoder);
    checkpoint_detail::read_blob(dir / m.at("optimizer_blob").get<std::string>(), dtype, first, 2, &second);
    ck.moments.emplace(std::move(first), std::move(second));
  }
  return ck;
}

}  // namespace mucot

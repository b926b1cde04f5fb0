#pragma once

// NNSM model container:
//   "NNSM" | u8 version=1 | u64 header_len | header_len bytes UTF-8 JSON | zero pad to 8
//   | blob of little-endian f32 arrays, each starting 8-byte aligned
// Tensor offsets in the JSON header are relative to the start of the blob.

#include <nnslicer/binary_io.hpp>
#include <nnslicer/hash.hpp>
#include <nnslicer/model.hpp>

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace nnslicer {

inline constexpr std::uint8_t kModelFormatVersion = 1;

namespace detail {

using nlohmann::json;

struct BlobBuilder {
  ByteWriter blob;
  json put(const Tensor& t) {
    blob.pad_to(8);
    json j{{"shape", t.shape()}, {"offset", blob.size()}};
    blob.floats(t.data());
    return j;
  }
};

inline Tensor read_blob_tensor(const json& j, std::span<const std::uint8_t> blob) {
  Shape shape = j.at("shape").get<Shape>();
  auto offset = j.at("offset").get<std::size_t>();
  if (offset % 8) throw FormatError("tensor offset not 8-byte aligned");
  ByteReader r(blob, "NNSM blob");
  r.seek(offset);
  for (auto d : shape)
    if (d == 0) throw FormatError("zero tensor dimension");
  return Tensor(shape, r.floats(element_count(shape)));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const ModelGraph& m) {
  using detail::json;
  require_valid(m);
  auto dims = infer_dims(m);
  detail::BlobBuilder bb;
  json layers = json::array();
  for (const auto& L : m.layers) {
    json j{{"index", L.index}, {"kind", std::string(kind_name(L.kind))}, {"inputs", L.inputs}};
    const auto& d = dims[L.index];
    j["output_shape"] = {d.c, d.h, d.w};
    if (L.kind == LayerKind::Conv2D || is_pool(L.kind)) {
      j["kernel"] = {L.window.kernel_h, L.window.kernel_w};
      j["stride"] = {L.window.stride_h, L.window.stride_w};
      j["padding"] = {L.window.pad_h, L.window.pad_w};
    }
    if (has_weights(L.kind)) j["units"] = L.units;
    json tensors = json::object();
    if (L.weights) tensors["weights"] = bb.put(*L.weights);
    if (L.bias) tensors["bias"] = bb.put(*L.bias);
    if (L.scale) {
      tensors["scale_mean"] = bb.put(L.scale->mean);
      tensors["scale_std"] = bb.put(L.scale->std);
      tensors["scale_gamma"] = bb.put(L.scale->gamma);
      tensors["scale_beta"] = bb.put(L.scale->beta);
    }
    if (!tensors.empty()) j["tensors"] = std::move(tensors);
    layers.push_back(std::move(j));
  }
  bb.blob.pad_to(8);
  json header{{"format", "NNSM"},
              {"input_shape", m.input_shape},
              {"class_count", m.class_count},
              {"layers", std::move(layers)},
              {"blob_bytes", bb.blob.size()}};
  std::string text = header.dump();

  ByteWriter out;
  out.bytes("NNSM");
  out.put<std::uint8_t>(kModelFormatVersion);
  out.put<std::uint64_t>(text.size());
  out.bytes(text);
  out.pad_to(8);
  out.bytes(bb.blob.buffer());
  return std::move(out).take();
}

inline ModelGraph deserialize_model(std::span<const std::uint8_t> bytes) {
  using detail::json;
  ByteReader r(bytes, "NNSM");
  r.expect_magic("NNSM");
  auto version = r.get<std::uint8_t>();
  if (version != kModelFormatVersion) throw FormatError("NNSM: unsupported version " + std::to_string(version));
  auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) throw FormatError("NNSM: malformed header length");
  auto text = r.bytes(static_cast<std::size_t>(len));
  json header;
  try {
    header = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("NNSM: malformed header: ") + e.what());
  }
  std::size_t blob_start = (r.position() + 7) / 8 * 8;
  r.seek(blob_start);
  auto blob = bytes.subspan(blob_start);

  ModelGraph m;
  try {
    m.input_shape = header.at("input_shape").get<Shape>();
    m.class_count = header.at("class_count").get<std::size_t>();
    if (header.at("blob_bytes").get<std::size_t>() != blob.size())
      throw FormatError("NNSM: blob size does not match header");
  } catch (const json::exception& e) {
    throw FormatError(std::string("NNSM: malformed header: ") + e.what());
  }
  const auto& layers = header.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& j = layers[i];
    try {
      LayerSpec L;
      L.index = j.at("index").get<std::size_t>();
      auto kind = parse_kind(j.at("kind").get<std::string>());
      if (!kind) throw FormatError("unknown layer kind " + j.at("kind").dump());
      L.kind = *kind;
      L.inputs = j.at("inputs").get<std::vector<std::size_t>>();
      if (j.contains("kernel")) {
        auto k = j.at("kernel").get<std::vector<std::size_t>>();
        auto s = j.at("stride").get<std::vector<std::size_t>>();
        auto p = j.at("padding").get<std::vector<std::size_t>>();
        if (k.size() != 2 || s.size() != 2 || p.size() != 2) throw FormatError("window fields must have 2 entries");
        L.window = {k[0], k[1], s[0], s[1], p[0], p[1]};
      }
      if (j.contains("units")) L.units = j.at("units").get<std::size_t>();
      if (j.contains("tensors")) {
        const auto& t = j.at("tensors");
        if (t.contains("weights")) L.weights = detail::read_blob_tensor(t.at("weights"), blob);
        if (t.contains("bias")) L.bias = detail::read_blob_tensor(t.at("bias"), blob);
        if (t.contains("scale_mean")) {
          L.scale = ScaleParams{detail::read_blob_tensor(t.at("scale_mean"), blob),
                                detail::read_blob_tensor(t.at("scale_std"), blob),
                                detail::read_blob_tensor(t.at("scale_gamma"), blob),
                                detail::read_blob_tensor(t.at("scale_beta"), blob)};
        }
      }
      m.layers.push_back(std::move(L));
    } catch (const json::exception& e) {
      throw FormatError("NNSM: layer " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw FormatError("NNSM: layer " + std::to_string(i) + ": " + e.what());
    }
  }
  require_valid(m);
  auto dims = infer_dims(m);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].contains("output_shape")) continue;
    auto s = layers[i].at("output_shape").get<std::vector<std::size_t>>();
    const auto& d = dims[i];
    if (s != std::vector<std::size_t>{d.c, d.h, d.w})
      throw FormatError("NNSM: layer " + std::to_string(i) + ": shape mismatch with declared output_shape");
  }
  return m;
}

inline void save_model(const ModelGraph& m, const std::filesystem::path& path) { write_file(path, serialize_model(m)); }

inline ModelGraph load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

// SHA-256 of the canonical NNSM encoding.
inline Digest model_fingerprint(const ModelGraph& m) { return sha256(serialize_model(m)); }

}  // namespace nnslicer

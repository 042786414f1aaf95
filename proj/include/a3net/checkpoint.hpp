#pragma once

// Checkpoint file: one line of JSON manifest (format tag, version, dtype,
// model dims, vocabulary, tensor names and shapes) terminated by '\n',
// followed by every tensor as raw little-endian float64 in manifest order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "a3net/error.hpp"
#include "a3net/model.hpp"

namespace a3net {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "a3net-checkpoint";

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
}

inline nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"vocab_size", d.vocab_size},         {"embed_dim", d.embed_dim},
          {"hidden", d.hidden},                 {"encoder_layers", d.encoder_layers},
          {"fusion_layers", d.fusion_layers},   {"max_word_len", d.max_word_len},
          {"literal_double_exp", d.literal_double_exp}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.vocab_size = j.at("vocab_size").get<std::size_t>();
  d.embed_dim = j.at("embed_dim").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  d.fusion_layers = j.at("fusion_layers").get<std::size_t>();
  d.max_word_len = j.at("max_word_len").get<std::size_t>();
  d.literal_double_exp = j.at("literal_double_exp").get<bool>();
  return d;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Model& model) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : model.params.entries()) tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"version", kCheckpointVersion},
                             {"dtype", "float64"},
                             {"byte_order", "little"},
                             {"dims", detail::dims_to_json(model.dims)},
                             {"vocab", model.vocab.chars()},
                             {"tensors", tensors}};
  out << manifest.dump() << '\n';
  for (const auto& e : model.params.entries()) {
    for (double v : e.value.data()) {
      const std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(v));
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
  }
  if (!out) throw Error("checkpoint: write failed");
}

inline Model read_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("checkpoint: missing manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw DataError("checkpoint: not an a3net checkpoint");
  if (manifest.value("version", -1) != kCheckpointVersion) {
    throw DataError("checkpoint: version " + manifest.value("version", nlohmann::json(-1)).dump() +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (manifest.value("dtype", "") != "float64" || manifest.value("byte_order", "") != "little") {
    throw DataError("checkpoint: unsupported dtype or byte order");
  }
  Model model;
  try {
    model.dims = detail::dims_from_json(manifest.at("dims"));
    model.vocab = Vocab::from_chars(manifest.at("vocab").get<std::vector<std::string>>());
    for (const auto& t : manifest.at("tensors")) {
      Tensor value(t.at("shape").get<Shape>());
      for (double& v : value.data()) {
        char bytes[8];
        if (!in.read(bytes, 8)) throw DataError("checkpoint: truncated tensor data");
        std::uint64_t bits;
        std::memcpy(&bits, bytes, 8);
        v = std::bit_cast<double>(detail::to_little(bits));
      }
      model.params.add(t.at("name").get<std::string>(), std::move(value));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest field: ") + e.what());
  }
  if (model.vocab.size() != model.dims.vocab_size) throw DataError("checkpoint: vocabulary size mismatch");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes after tensors");
  return model;
}

inline void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, model);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace a3net

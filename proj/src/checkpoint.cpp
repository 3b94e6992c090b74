#include "metaprompt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "metaprompt/errors.hpp"

namespace metaprompt {

using json = nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

NamedArray named(const std::string& name, const ad::Tensor& t) {
  return {name, t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end())};
}

std::vector<NamedArray> backbone_arrays(const Backbone& backbone) {
  const auto& w = backbone.weights();
  std::vector<NamedArray> out;
  out.push_back(named("token_embedding", w.token_embedding));
  out.push_back(named("position_embedding", w.position_embedding));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& layer = w.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back(named(p + "ln1_gain", layer.ln1_gain));
    out.push_back(named(p + "ln1_bias", layer.ln1_bias));
    const auto heads = [&](const char* what, const std::vector<ad::Tensor>& ts) {
      for (std::size_t h = 0; h < ts.size(); ++h) {
        out.push_back(named(p + what + std::to_string(h), ts[h]));
      }
    };
    heads("query", layer.query);
    heads("key", layer.key);
    heads("value", layer.value);
    heads("output", layer.output);
    out.push_back(named(p + "ln2_gain", layer.ln2_gain));
    out.push_back(named(p + "ln2_bias", layer.ln2_bias));
    out.push_back(named(p + "mlp_in", layer.mlp_in));
    out.push_back(named(p + "mlp_out", layer.mlp_out));
  }
  out.push_back(named("final_gain", w.final_gain));
  out.push_back(named("final_bias", w.final_bias));
  return out;
}

}  // namespace

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::kPrompt: return "prompt";
    case CheckpointKind::kBackbone: return "backbone";
    case CheckpointKind::kFull: return "full";
  }
  return "?";
}

CheckpointKind parse_checkpoint_kind(const std::string& name) {
  if (name == "prompt") return CheckpointKind::kPrompt;
  if (name == "backbone") return CheckpointKind::kBackbone;
  if (name == "full") return CheckpointKind::kFull;
  throw CheckpointError("unknown checkpoint kind '" + name + "'");
}

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw CheckpointError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  json metadata;
  try {
    metadata = json::parse(checkpoint.header.metadata);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!metadata.is_object()) throw CheckpointError("metadata must be a JSON object");

  json header;
  header["format_version"] = checkpoint.header.format_version;
  header["kind"] = to_string(checkpoint.header.kind);
  header["config_digest"] = checkpoint.header.config_digest;
  header["seed"] = checkpoint.header.seed;
  header["metadata"] = metadata;
  header["arrays"] = json::array();
  std::set<std::string> names;
  for (const auto& a : checkpoint.arrays) {
    if (a.values.size() != a.rows * a.cols) {
      throw CheckpointError("array '" + a.name + "' holds " +
                            std::to_string(a.values.size()) + " values for shape " +
                            std::to_string(a.rows) + "x" + std::to_string(a.cols));
    }
    if (!names.insert(a.name).second) {
      throw CheckpointError("duplicate array name '" + a.name + "'");
    }
    header["arrays"].push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  }

  const std::string header_text = header.dump();
  std::string bytes(kCheckpointMagic, 4);
  put_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  for (const auto& a : checkpoint.arrays) {
    for (double v : a.values) put_f64(bytes, v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw CheckpointError("cannot stat " + path.string());

  std::array<unsigned char, 8> prefix{};
  in.read(reinterpret_cast<char*>(prefix.data()), 4);
  if (in.gcount() != 4 || std::memcmp(prefix.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  in.read(reinterpret_cast<char*>(prefix.data() + 4), 4);
  if (in.gcount() != 4) {
    throw CheckpointError(path.string() + ": truncated header length");
  }
  const std::uint64_t header_len = get_le(prefix.data() + 4, 4);
  if (header_len > file_size - 8) {
    throw CheckpointError(path.string() + ": header length " +
                          std::to_string(header_len) + " exceeds file size " +
                          std::to_string(file_size));
  }

  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }

  Checkpoint ck;
  std::uint64_t payload_values = 0;
  try {
    ck.header.format_version = header.at("format_version").get<int>();
    if (ck.header.format_version != kCheckpointVersion) {
      throw CheckpointError(path.string() + ": unsupported format version " +
                            std::to_string(ck.header.format_version));
    }
    ck.header.kind = parse_checkpoint_kind(header.at("kind").get<std::string>());
    ck.header.config_digest = header.at("config_digest").get<std::string>();
    ck.header.seed = header.at("seed").get<std::uint64_t>();
    const auto& metadata = header.at("metadata");
    if (!metadata.is_object()) throw CheckpointError("metadata must be an object");
    ck.header.metadata = metadata.dump();
    for (const auto& a : header.at("arrays")) {
      NamedArray arr;
      arr.name = a.at("name").get<std::string>();
      arr.rows = a.at("rows").get<std::size_t>();
      arr.cols = a.at("cols").get<std::size_t>();
      if (arr.cols != 0 && arr.rows > std::numeric_limits<std::uint64_t>::max() / 8 / arr.cols) {
        throw CheckpointError("array '" + arr.name + "' is too large");
      }
      payload_values += arr.rows * arr.cols;
      ck.arrays.push_back(std::move(arr));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header field: " + e.what());
  }

  const std::uint64_t expected = payload_values * 8;
  const std::uint64_t actual = file_size - 8 - header_len;
  if (expected != actual) {
    throw CheckpointError(path.string() + ": payload length mismatch: expected " +
                          std::to_string(expected) + " bytes, found " +
                          std::to_string(actual));
  }

  std::vector<unsigned char> payload(actual);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(actual));
  if (static_cast<std::uint64_t>(in.gcount()) != actual) {
    throw CheckpointError(path.string() + ": short read of payload");
  }
  const unsigned char* p = payload.data();
  for (auto& arr : ck.arrays) {
    arr.values.resize(arr.rows * arr.cols);
    for (double& v : arr.values) {
      v = std::bit_cast<double>(get_le(p, 8));
      p += 8;
    }
  }
  return ck;
}

Checkpoint make_prompt_checkpoint(const SoftPrompt& prompt,
                                  const std::string& config_digest,
                                  std::uint64_t seed, const std::string& metadata) {
  Checkpoint ck;
  ck.header.kind = CheckpointKind::kPrompt;
  ck.header.config_digest = config_digest;
  ck.header.seed = seed;
  ck.header.metadata = metadata;
  NamedArray arr;
  arr.name = "prompt";
  arr.rows = prompt.length();
  arr.cols = prompt.d();
  const auto data = prompt.values().data();
  arr.values.assign(data.begin(), data.end());
  ck.arrays.push_back(std::move(arr));
  return ck;
}

SoftPrompt prompt_from_checkpoint(const Checkpoint& checkpoint, std::size_t expected_d) {
  if (checkpoint.header.kind == CheckpointKind::kBackbone) {
    throw CheckpointError("checkpoint of kind backbone holds no prompt");
  }
  const auto& arr = checkpoint.array("prompt");
  if (expected_d != 0 && arr.cols != expected_d) {
    throw ShapeError("prompt width " + std::to_string(arr.cols) +
                     " does not match backbone d_model " + std::to_string(expected_d));
  }
  if (arr.cols == 0) throw ShapeError("prompt width must be positive");
  ad::Tensor values(arr.rows, arr.cols, arr.values, /*requires_grad=*/true);
  return SoftPrompt(std::move(values), arr.cols);
}

Checkpoint make_backbone_checkpoint(const Backbone& backbone,
                                    const std::string& config_digest) {
  Checkpoint ck;
  ck.header.kind = CheckpointKind::kBackbone;
  ck.header.config_digest = config_digest;
  ck.header.seed = backbone.config().seed;
  json meta;
  meta["backbone_digest"] = backbone.digest();
  ck.header.metadata = meta.dump();
  ck.arrays = backbone_arrays(backbone);
  return ck;
}

bool backbone_matches(const Checkpoint& checkpoint, const Backbone& backbone) {
  const auto expected = backbone_arrays(backbone);
  for (const auto& want : expected) {
    if (!checkpoint.has_array(want.name)) return false;
    const auto& got = checkpoint.array(want.name);
    if (got.rows != want.rows || got.cols != want.cols) return false;
    if (std::memcmp(got.values.data(), want.values.data(),
                    want.values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace metaprompt

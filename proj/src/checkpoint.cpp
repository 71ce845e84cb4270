// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <json.hpp>

#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"

namespace fairjudge {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr std::string_view kMagic = "FJCKPT 1";

nlohmann::json config_to_json(const LmConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},         {"context_len", c.context_len}, {"vocab_size", c.vocab_size},
          {"seed", c.seed}};
}

LmConfig config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.context_len = j.at("context_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void append_doubles(std::string& out, const std::vector<double>& v) {
  const std::size_t bytes = v.size() * sizeof(double);
  const std::size_t at = out.size();
  out.resize(at + bytes);
  if (bytes > 0) std::memcpy(out.data() + at, v.data(), bytes);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  const bool has_moments = !ckpt.optimizer.m.empty();
  if (has_moments && (ckpt.optimizer.m.size() != p.values().size() ||
                      ckpt.optimizer.v.size() != p.values().size())) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  }
  if (ckpt.vocab.size() != p.config().vocab_size) {
    throw Error(ErrorCode::ShapeMismatch, "vocab size does not match config");
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : p.layout().tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  nlohmann::json header = {
      {"config", config_to_json(p.config())},
      {"vocab", ckpt.vocab.tokens()},
      {"tensors", tensors},
      {"param_count", p.values().size()},
      {"optimizer", {{"step", ckpt.optimizer.step}, {"has_moments", has_moments}}},
      {"rng_state", ckpt.rng_state},
      {"config_hash", ckpt.config_hash},
      {"meta", ckpt.meta},
  };
  std::string out(kMagic);
  out.push_back('\n');
  out += header.dump();
  out.push_back('\n');
  append_doubles(out, p.values());
  if (has_moments) {
    append_doubles(out, ckpt.optimizer.m);
    append_doubles(out, ckpt.optimizer.v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, kMagic) != 0) {
    throw Error(ErrorCode::CheckpointCorrupt, "bad magic");
  }
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw Error(ErrorCode::CheckpointCorrupt, "missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointCorrupt, std::string("header: ") + e.what());
  }
  try {
    const LmConfig config = config_from_json(header.at("config"));
    config.validate();
    LmParams params(config);
    const auto& layout = params.layout();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != layout.tensors.size() ||
        header.at("param_count").get<std::size_t>() != layout.total) {
      throw Error(ErrorCode::ShapeMismatch, "tensor table does not match config");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = layout.tensors[i];
      if (tensors[i].at("name").get<std::string>() != t.name ||
          tensors[i].at("shape").get<std::vector<std::size_t>>() != t.shape ||
          tensors[i].at("offset").get<std::size_t>() != t.offset) {
        throw Error(ErrorCode::ShapeMismatch, "tensor " + t.name + " inconsistent with config");
      }
    }
    Vocab vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    if (vocab.size() != config.vocab_size) {
      throw Error(ErrorCode::ShapeMismatch, "vocab size does not match config");
    }
    const bool has_moments = header.at("optimizer").at("has_moments").get<bool>();
    const std::size_t n = layout.total;
    const std::size_t expected = n * sizeof(double) * (has_moments ? 3 : 1);
    const std::size_t payload = bytes.size() - nl2 - 1;
    if (payload != expected) {
      throw Error(ErrorCode::CheckpointCorrupt, "payload has " + std::to_string(payload) +
                                                    " bytes, expected " + std::to_string(expected));
    }
    const char* src = bytes.data() + nl2 + 1;
    std::memcpy(params.values().data(), src, n * sizeof(double));
    AdamState opt;
    opt.step = header.at("optimizer").at("step").get<std::uint64_t>();
    if (has_moments) {
      opt.m.resize(n);
      opt.v.resize(n);
      std::memcpy(opt.m.data(), src + n * sizeof(double), n * sizeof(double));
      std::memcpy(opt.v.data(), src + 2 * n * sizeof(double), n * sizeof(double));
    }
    if (!params.all_finite()) throw Error(ErrorCode::CheckpointCorrupt, "non-finite parameters");
    return Checkpoint{std::move(params),
                      std::move(vocab),
                      std::move(opt),
                      header.at("rng_state").get<std::string>(),
                      header.at("config_hash").get<std::string>(),
                      header.at("meta").get<std::map<std::string, std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointCorrupt, std::string("header field: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, bool overwrite) {
  write_artifact(path, serialize_checkpoint(ckpt), overwrite);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingCheckpoint, path.string());
  }
  return deserialize_checkpoint(read_file(path));
}

}  // namespace fairjudge

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fairjudge/adam.hpp"
#include "fairjudge/model.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {

// Self-describing container:
//   line 1  "FJCKPT 1"
//   line 2  JSON header (config, vocab, tensor table, optimizer step,
//           rng state, config hash, free-form metadata)
//   rest    little-endian float64: params, then Adam m and v if present.
struct Checkpoint {
  LmParams params;
  Vocab vocab;
  AdamState optimizer;
  std::string rng_state;
  std::string config_hash;
  std::map<std::string, std::string> meta;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// save goes through write_artifact (no silent overwrite unless asked).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     bool overwrite = false);
// Validates the tensor table against the embedded config; throws
// CheckpointCorrupt or ShapeMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairjudge

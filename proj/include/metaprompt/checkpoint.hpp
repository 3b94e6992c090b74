#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/prompt.hpp"

namespace metaprompt {

/// Container layout:
///   "MPF1" | u32 LE header length | JSON header | f64 LE payload arrays
/// Arrays follow in the order the header lists them.
inline constexpr char kCheckpointMagic[4] = {'M', 'P', 'F', '1'};
inline constexpr int kCheckpointVersion = 1;

enum class CheckpointKind { kPrompt, kBackbone, kFull };

std::string to_string(CheckpointKind kind);
CheckpointKind parse_checkpoint_kind(const std::string& name);

struct NamedArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

struct CheckpointHeader {
  int format_version = kCheckpointVersion;
  CheckpointKind kind = CheckpointKind::kPrompt;
  std::string config_digest;
  std::uint64_t seed = 0;
  /// Free-form JSON object text for producer metadata (trainer, item list,
  /// embedded run config). Must parse as a JSON object.
  std::string metadata = "{}";

  bool operator==(const CheckpointHeader&) const = default;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<NamedArray> arrays;

  /// Throws CheckpointError when absent.
  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Verifies magic, version and exact payload length before decoding. Errors
/// are CheckpointError; a short or long payload reports expected and actual
/// byte counts.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// A kind=prompt checkpoint holding one array named "prompt".
Checkpoint make_prompt_checkpoint(const SoftPrompt& prompt,
                                  const std::string& config_digest,
                                  std::uint64_t seed,
                                  const std::string& metadata = "{}");

/// Rebuilds the prompt as a fresh leaf with requires_grad set. Throws
/// ShapeError when d differs from `expected_d` (0 skips the check).
SoftPrompt prompt_from_checkpoint(const Checkpoint& checkpoint,
                                  std::size_t expected_d = 0);

/// Every backbone weight, named by position in the architecture.
Checkpoint make_backbone_checkpoint(const Backbone& backbone,
                                    const std::string& config_digest);

/// True when the checkpoint holds exactly the weights of `backbone`.
bool backbone_matches(const Checkpoint& checkpoint, const Backbone& backbone);

}  // namespace metaprompt

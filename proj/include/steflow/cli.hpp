#pragma once

#include <string>
#include <vector>

#include "steflow/config_file.hpp"
#include "steflow/simulator.hpp"

namespace steflow {

/// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `ste-flow` invocation; args[0] is the program name.
int dispatch(const std::vector<std::string>& args);

/// Synthetic dataset settings read by `gen-synth`.
struct SynthConfig {
  SceneConfig scene;
  int n_sequences = 1;
  double random_flow_max = 0.0;  // > 0: per-sequence random constant flow within this radius
  bool random_texture = true;    // per-sequence texture seeds derived from `seed`
  std::uint64_t seed = 1;
  int substeps = 16;
  std::vector<int> gt_spans{1, 4};

  static SynthConfig from_key_values(const KeyValues& kv);
  /// Scene of sequence i.
  SceneConfig scene_for(int i) const;
};

}  // namespace steflow

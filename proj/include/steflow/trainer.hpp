#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steflow/autograd.hpp"
#include "steflow/config_file.hpp"
#include "steflow/evaluation.hpp"
#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"
#include "steflow/network.hpp"
#include "steflow/objective.hpp"
#include "steflow/representation.hpp"
#include "steflow/simulator.hpp"

namespace steflow {

enum class Ablation { full, no_corr, no_irr, no_convgru, no_mil };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& name);

struct TrainConfig {
  int dt = 1;
  int n_frame = 5;
  int epochs = 40;
  double lr = 4e-4;
  double lr_decay = 0.7;
  std::vector<int> lr_boundaries{5, 10, 20};  // epochs after which lr is decayed
  int batch_size = 4;
  int n_irr = 3;
  std::uint64_t seed = 1;
  double smoothness_weight = 10.0;
  Ablation ablation = Ablation::full;
  RepresentationKind representation = RepresentationKind::gaussian;

  int base_channels = 8;
  int corr_radius = 3;
  int max_steps = 0;         // 0 = run all epochs
  double grad_clip = 10.0;   // global norm; 0 disables
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  int window_stride = 1;     // frames between consecutive window starts
  int crop = 0;              // center crop of training inputs; 0 = none
  bool augment = false;      // random flips
  bool supervise_all_iterations = true;

  /// Values of the published training setup.
  static TrainConfig paper_profile(int dt);
  /// Small model and batch for single-machine experiments.
  static TrainConfig desk_profile(int dt);

  void validate() const;
  /// Learning rate during a 0-based epoch.
  double lr_for_epoch(int epoch) const;

  KeyValues to_key_values() const;
  /// Starts from the profile named by a "profile" key (desk by default) and
  /// overrides every other key. Unknown keys throw ArgumentError.
  static TrainConfig from_key_values(const KeyValues& kv);
  static TrainConfig load(const std::filesystem::path& path);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Network and loss settings for the configured ablation. no_corr routes the
/// prior flow into the input; no_irr and no_convgru also drop the correlation
/// layer, which has no prior flow to use without refinement.
std::pair<NetworkConfig, LossConfig> apply_ablation(const TrainConfig& cfg,
                                                    int input_channels = 2);

/// A recording on disk: events.evt, frames/ and optional flow/dt<k>_<i>.flo.
struct Recording {
  std::string name;
  EventStream events;
  FrameSequence frames;
  std::map<std::pair<int, std::size_t>, FlowField> gt;  // (dt, first frame) -> flow
};

Recording load_recording(const std::filesystem::path& dir);
void save_recording(const Recording& rec, const std::filesystem::path& dir);
/// A single recording directory, or a directory of recording subdirectories
/// (sorted by name).
std::vector<Recording> load_dataset(const std::filesystem::path& dir);
std::filesystem::path flow_path(const std::filesystem::path& dir, int dt, std::size_t first);

/// Recording from simulator output, with ground truth for each span in `spans`.
Recording make_recording(const SceneConfig& scene, const SyntheticSample& sample,
                         const std::vector<int>& spans, std::string name = "synthetic");

struct TrainingSample {
  std::vector<Tensor<float>> images;
  std::vector<GrayImage> frames;  // dt + 1 frames, window start first
  std::vector<WindowTarget> alignment;
  EventImage activity;            // plain counts over the whole window
  std::optional<FlowField> gt;    // flow over the whole window
  std::size_t first_frame = 0;
  std::string source;
};

using GroundTruthLookup = std::function<std::optional<FlowField>(std::size_t first_frame)>;

/// Windows of dt frame intervals starting every window_stride frames. Each
/// interval's events are split into n_frame/dt images (the whole window into
/// n_frame images when n_frame is not a multiple of dt). Too-short
/// recordings yield no windows and a warning on stderr.
std::vector<TrainingSample> build_windows(const EventStream& stream, const FrameSequence& frames,
                                          const TrainConfig& cfg,
                                          const GroundTruthLookup& gt = {});
std::vector<TrainingSample> build_windows(const Recording& rec, const TrainConfig& cfg);
/// The single window starting at frame `first` (no crop, no ground truth).
TrainingSample build_window(const EventStream& stream, const FrameSequence& frames,
                            const TrainConfig& cfg, std::size_t first);
/// Windows of every recording, built by up to STEFLOW_NUM_WORKERS threads and
/// concatenated in recording order.
std::vector<TrainingSample> build_dataset(const std::vector<Recording>& recs,
                                          const TrainConfig& cfg);

int worker_count();

struct Checkpoint {
  ad::ParameterSet<float> params;
  NetworkConfig network;
  long long step = 0;
  TrainConfig train;
  RepresentationConfig representation;
};

/// Writes the parameter archive at `path` and the text metadata at
/// `path` + ".meta".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path metadata_path(const std::filesystem::path& path);

struct MetricsRow {
  long long step = 0;
  double total = 0.0;
  double photometric = 0.0;
  double smoothness = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;  // last good parameters
  std::vector<MetricsRow> metrics;
  bool diverged = false;
  std::string message;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints and metrics.csv
  std::optional<ad::ParameterSet<float>> initial;
  std::function<void(const MetricsRow&)> on_step;
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ad::ParameterSet<float>& params, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

/// Global L2 norm of all gradients; rescales them to max_norm when larger.
double clip_gradients(ad::ParameterSet<float>& params, double max_norm);

TrainResult train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                  const TrainOptions& options = {});

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

/// Full-resolution flow for one window. Inputs whose sides are not multiples
/// of 16 are zero-padded on the right and bottom; the output is cropped back.
FlowField predict_flow(SteFlowNet<float>& net, const std::vector<Tensor<float>>& images);
/// Final accumulated flow after every timestep (last refinement pass).
std::vector<FlowField> predict_intermediate(SteFlowNet<float>& net,
                                            const std::vector<Tensor<float>>& images);

/// Metrics over windows with ground truth. `crop` > 0 center-crops inputs,
/// ground truth and activity first (skipped when the input is smaller).
EvalReport evaluate(SteFlowNet<float>& net, const std::vector<TrainingSample>& samples,
                    int crop = 0, std::vector<FlowField>* predictions = nullptr);

Tensor<float> center_crop(const Tensor<float>& t, int size);

}  // namespace steflow

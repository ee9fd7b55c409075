#pragma once

#include <cstdint>
#include <vector>

#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"

namespace steflow {

struct Displacement {
  double u = 0.0;  // pixels per frame interval, +x right
  double v = 0.0;  // +y down
};

/// A textured plane sliding past the sensor. The flow schedule holds one
/// displacement per frame interval; the last entry repeats when the schedule
/// is shorter than the sequence.
struct SceneConfig {
  int width = 64;
  int height = 64;
  std::uint64_t texture_seed = 1;
  double texture_scale = 4.0;  // lattice spacing of the noise, pixels
  int texture_period = 0;      // pixels; 0 = aperiodic
  std::vector<Displacement> flow{{1.0, 0.0}};
  int n_frames = 2;
  double frame_dt = 0.05;            // seconds
  double contrast_threshold = 0.2;   // log-intensity units
  double bandwidth_limit = 0.0;      // events per pixel per second, 0 = unlimited
  double noise_rate = 0.0;           // spurious events per pixel per second
  std::uint64_t noise_seed = 7;
  double log_eps = 1e-3;

  void validate() const;
  /// Integrated displacement of the texture at time t (seconds from frame 0).
  Displacement offset_at(double t) const;
};

struct SyntheticSample {
  EventStream events;
  FrameSequence frames;
  std::vector<FlowField> gt_flow;  // frame i -> i+1
};

/// Smooth value noise: cubic B-spline over a hashed lattice, in [0, 1].
double texture_value(const SceneConfig& cfg, double x, double y);

/// Intensities in [0.1, 0.9] of the translated texture at time t.
GrayImage render_frame(const SceneConfig& cfg, double t);
FrameSequence render_sequence(const SceneConfig& cfg);

/// Per-pixel DVS model: events fire whenever the log intensity moves a full
/// threshold away from the pixel's reference level. Between two fed images the
/// log intensity is linear in time. A positive bandwidth limit imposes a
/// refractory period of 1/limit seconds after each emitted event; crossings in
/// that period are lost but still move the reference level.
class EventSensor {
 public:
  EventSensor(int width, int height, double threshold, double bandwidth_limit, double noise_rate,
              std::uint64_t noise_seed, double log_eps = 1e-3);

  /// The first call only sets the reference levels.
  void feed(const GrayImage& image, double t, std::vector<Event>& out);

 private:
  int width_, height_;
  double threshold_, refractory_, noise_rate_, log_eps_;
  std::uint64_t rng_state_;
  bool initialized_ = false;
  double last_t_ = 0.0;
  std::vector<double> last_log_, reference_, last_emit_;

  double uniform();
};

/// Emits events while interpolating each frame interval in `substeps` equal
/// sub-intervals (noise and refractory filtering act per sub-interval).
EventStream emit_events(const FrameSequence& frames, const SceneConfig& cfg, int substeps = 16);

/// Renders the scene at `substeps` samples per frame interval, runs the sensor
/// on that dense sequence and returns the frames at the interval boundaries
/// together with exact ground truth.
SyntheticSample simulate(const SceneConfig& cfg, int substeps = 16);

/// Integrated translation over [t_i, t_{i+dt}], constant over the image.
FlowField gt_flow(const SceneConfig& cfg, std::size_t i, std::size_t dt);

}  // namespace steflow

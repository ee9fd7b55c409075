#include "steflow/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "steflow/errors.hpp"

namespace steflow {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full:
      return "full";
    case Ablation::no_corr:
      return "no_corr";
    case Ablation::no_irr:
      return "no_irr";
    case Ablation::no_convgru:
      return "no_convgru";
    case Ablation::no_mil:
      return "no_mil";
  }
  return "unknown";
}

Ablation ablation_from_string(const std::string& name) {
  for (Ablation a : {Ablation::full, Ablation::no_corr, Ablation::no_irr, Ablation::no_convgru,
                     Ablation::no_mil})
    if (to_string(a) == name) return a;
  throw ArgumentError("unknown ablation '" + name + "'");
}

TrainConfig TrainConfig::paper_profile(int dt) {
  TrainConfig c;
  c.dt = dt;
  c.n_frame = dt == 4 ? 20 : 5;
  c.epochs = dt == 4 ? 15 : 40;
  c.batch_size = 16;
  c.base_channels = 32;
  return c;
}

TrainConfig TrainConfig::desk_profile(int dt) {
  TrainConfig c;
  c.dt = dt;
  c.n_frame = dt == 4 ? 20 : 5;
  c.epochs = dt == 4 ? 15 : 40;
  c.batch_size = 4;
  c.base_channels = 8;
  c.corr_radius = 2;
  c.lr = 1e-3;
  c.smoothness_weight = 5e-4;
  return c;
}

void TrainConfig::validate() const {
  if (dt != 1 && dt != 4) throw ArgumentError("dt must be 1 or 4, got " + std::to_string(dt));
  if (ablation == Ablation::no_mil && dt == 1)
    throw UsageError("no_mil is undefined for dt=1: a dt=1 window has no intermediate frames");
  if (n_frame < 1) throw ArgumentError("n_frame must be >= 1");
  const bool mil = dt > 1 && ablation != Ablation::no_mil && ablation != Ablation::no_convgru;
  if (mil && n_frame % dt != 0)
    throw ArgumentError("n_frame must be divisible by dt when intermediate losses are enabled");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
  if (!(lr_decay > 0.0)) throw ArgumentError("lr_decay must be positive");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (n_irr < 1) throw ArgumentError("n_irr must be >= 1");
  if (base_channels < 1) throw ArgumentError("base_channels must be >= 1");
  if (corr_radius < 1) throw ArgumentError("corr_radius must be >= 1");
  if (max_steps < 0) throw ArgumentError("max_steps must be >= 0");
  if (!(grad_clip >= 0.0)) throw ArgumentError("grad_clip must be >= 0");
  if (checkpoint_every < 0) throw ArgumentError("checkpoint_every must be >= 0");
  if (window_stride < 1) throw ArgumentError("window_stride must be >= 1");
  if (crop < 0 || crop % NetworkConfig::size_multiple() != 0)
    throw ArgumentError("crop must be a non-negative multiple of 16");
  if (!(smoothness_weight >= 0.0)) throw ArgumentError("smoothness_weight must be >= 0");
}

double TrainConfig::lr_for_epoch(int epoch) const {
  const auto passed = std::count_if(lr_boundaries.begin(), lr_boundaries.end(),
                                    [epoch](int b) { return b <= epoch; });
  return lr * std::pow(lr_decay, static_cast<double>(passed));
}

KeyValues TrainConfig::to_key_values() const {
  return {{"dt", std::to_string(dt)},
          {"n_frame", std::to_string(n_frame)},
          {"epochs", std::to_string(epochs)},
          {"lr", format_double(lr)},
          {"lr_decay", format_double(lr_decay)},
          {"lr_boundaries", join(lr_boundaries)},
          {"batch_size", std::to_string(batch_size)},
          {"n_irr", std::to_string(n_irr)},
          {"seed", std::to_string(seed)},
          {"smoothness_weight", format_double(smoothness_weight)},
          {"ablation", to_string(ablation)},
          {"representation", to_string(representation)},
          {"base_channels", std::to_string(base_channels)},
          {"corr_radius", std::to_string(corr_radius)},
          {"max_steps", std::to_string(max_steps)},
          {"grad_clip", format_double(grad_clip)},
          {"checkpoint_every", std::to_string(checkpoint_every)},
          {"window_stride", std::to_string(window_stride)},
          {"crop", std::to_string(crop)},
          {"augment", augment ? "true" : "false"},
          {"supervise_all_iterations", supervise_all_iterations ? "true" : "false"}};
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  int dt = 1;
  if (auto it = kv.find("dt"); it != kv.end()) dt = kv_int("dt", it->second);
  std::string profile = "desk";
  if (auto it = kv.find("profile"); it != kv.end()) profile = it->second;
  TrainConfig c;
  if (profile == "desk")
    c = desk_profile(dt);
  else if (profile == "paper")
    c = paper_profile(dt);
  else
    throw ArgumentError("unknown profile '" + profile + "'");

  for (const auto& [k, v] : kv) {
    if (k == "profile" || k == "dt") continue;
    if (k == "n_frame") c.n_frame = kv_int(k, v);
    else if (k == "epochs") c.epochs = kv_int(k, v);
    else if (k == "lr") c.lr = kv_double(k, v);
    else if (k == "lr_decay") c.lr_decay = kv_double(k, v);
    else if (k == "lr_boundaries") c.lr_boundaries = kv_int_list(k, v);
    else if (k == "batch_size") c.batch_size = kv_int(k, v);
    else if (k == "n_irr") c.n_irr = kv_int(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(kv_int64(k, v));
    else if (k == "smoothness_weight") c.smoothness_weight = kv_double(k, v);
    else if (k == "ablation") c.ablation = ablation_from_string(v);
    else if (k == "representation") c.representation = representation_from_string(v);
    else if (k == "base_channels") c.base_channels = kv_int(k, v);
    else if (k == "corr_radius") c.corr_radius = kv_int(k, v);
    else if (k == "max_steps") c.max_steps = kv_int(k, v);
    else if (k == "grad_clip") c.grad_clip = kv_double(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = kv_int(k, v);
    else if (k == "window_stride") c.window_stride = kv_int(k, v);
    else if (k == "crop") c.crop = kv_int(k, v);
    else if (k == "augment") c.augment = kv_bool(k, v);
    else if (k == "supervise_all_iterations") c.supervise_all_iterations = kv_bool(k, v);
    else throw ArgumentError("unknown training key '" + k + "'");
  }
  c.dt = dt;
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  return from_key_values(read_key_values(path));
}

std::pair<NetworkConfig, LossConfig> apply_ablation(const TrainConfig& cfg, int input_channels) {
  cfg.validate();
  NetworkConfig net;
  net.base_channels = cfg.base_channels;
  net.corr_radius = cfg.corr_radius;
  net.n_irr = cfg.n_irr;
  net.input_channels = input_channels;
  LossConfig loss;
  loss.smoothness_weight = cfg.smoothness_weight;
  loss.supervise_all_iterations = cfg.supervise_all_iterations;
  loss.mil_enabled = cfg.dt > 1;
  switch (cfg.ablation) {
    case Ablation::full:
      break;
    case Ablation::no_corr:
      net.use_correlation = false;
      break;
    case Ablation::no_irr:
      net.use_irr = false;
      net.use_correlation = false;
      break;
    case Ablation::no_convgru:
      net.use_convgru = false;
      net.use_irr = false;
      net.use_correlation = false;
      loss.mil_enabled = false;
      break;
    case Ablation::no_mil:
      loss.mil_enabled = false;
      break;
  }
  net.validate();
  return {net, loss};
}

// ---------------------------------------------------------------------------
// Recordings

fs::path flow_path(const fs::path& dir, int dt, std::size_t first) {
  std::ostringstream s;
  s << "dt" << dt << "_" << std::setw(6) << std::setfill('0') << first << ".flo";
  return dir / "flow" / s.str();
}

Recording load_recording(const fs::path& dir) {
  Recording rec;
  rec.name = dir.filename().string();
  rec.events = read_events(dir / "events.evt");
  rec.frames = read_frames(dir / "frames");
  const fs::path flow_dir = dir / "flow";
  if (fs::is_directory(flow_dir)) {
    static const std::regex pattern(R"(dt(\d+)_(\d+)\.flo)");
    for (const auto& entry : fs::directory_iterator(flow_dir)) {
      std::smatch m;
      const std::string name = entry.path().filename().string();
      if (!std::regex_match(name, m, pattern)) continue;
      rec.gt[{std::stoi(m[1]), std::stoul(m[2])}] = read_flow(entry.path());
    }
  }
  return rec;
}

void save_recording(const Recording& rec, const fs::path& dir) {
  fs::create_directories(dir);
  write_events(rec.events, dir / "events.evt");
  write_frames(rec.frames, dir / "frames");
  if (!rec.gt.empty()) fs::create_directories(dir / "flow");
  for (const auto& [key, flow] : rec.gt) write_flow(flow, flow_path(dir, key.first, key.second));
}

std::vector<Recording> load_dataset(const fs::path& dir) {
  if (fs::exists(dir / "events.evt")) return {load_recording(dir)};
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "events.evt")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no recordings under " + dir.string());
  std::vector<Recording> out;
  for (const auto& d : dirs) out.push_back(load_recording(d));
  return out;
}

Recording make_recording(const SceneConfig& scene, const SyntheticSample& sample,
                         const std::vector<int>& spans, std::string name) {
  Recording rec;
  rec.name = std::move(name);
  rec.events = sample.events;
  rec.frames = sample.frames;
  for (int dt : spans)
    for (std::size_t i = 0; i + dt < sample.frames.size(); ++i)
      rec.gt[{dt, i}] = gt_flow(scene, i, static_cast<std::size_t>(dt));
  return rec;
}

// ---------------------------------------------------------------------------
// Windows

namespace {

bool croppable(int width, int height, int size) {
  return size > 0 && width >= size && height >= size && (width > size || height > size);
}

void crop_sample(TrainingSample& s, int size) {
  const int w = s.activity.width;
  const int h = s.activity.height;
  if (!croppable(w, h, size)) return;
  for (auto& img : s.images) img = center_crop(img, size);
  for (auto& f : s.frames) f = center_crop(f, size);
  s.activity = center_crop(s.activity, size);
  if (s.gt) s.gt = center_crop(*s.gt, size);
}

std::vector<WindowTarget> sample_alignment(const TrainConfig& cfg, int timesteps) {
  if (cfg.ablation == Ablation::no_convgru) return {{0, cfg.dt}};
  const bool mil = cfg.dt > 1 && cfg.ablation != Ablation::no_mil;
  return window_alignment(timesteps, cfg.dt, mil);
}

}  // namespace

Tensor<float> center_crop(const Tensor<float>& t, int size) {
  if (size <= 0 || t.w < size || t.h < size)
    throw ArgumentError("cannot crop " + shape_string(t) + " to " + std::to_string(size));
  Tensor<float> out(t.c, size, size);
  const int oy = (t.h - size) / 2;
  const int ox = (t.w - size) / 2;
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < size; ++y)
      std::copy_n(&t(c, y + oy, ox), size, &out(c, y, 0));
  return out;
}

TrainingSample build_window(const EventStream& stream, const FrameSequence& frames,
                            const TrainConfig& cfg, std::size_t first) {
  const std::size_t dt = static_cast<std::size_t>(cfg.dt);
  if (first + dt >= frames.size())
    throw RangeError("window at frame " + std::to_string(first) + " with dt=" +
                     std::to_string(dt) + " exceeds " + std::to_string(frames.size()) + " frames");
  if (frames.frames[0].width != stream.width || frames.frames[0].height != stream.height)
    throw ArgumentError("frames and events differ in size");
  RepresentationConfig rep;
  rep.width = stream.width;
  rep.height = stream.height;
  rep.kind = cfg.representation;

  TrainingSample s;
  s.first_frame = first;
  if (cfg.n_frame % cfg.dt == 0) {
    rep.n_splits = cfg.n_frame / cfg.dt;
    for (std::size_t j = 0; j < dt; ++j)
      for (auto& t : encode_inputs(slice_between_frames(stream, frames, first + j, 1), rep))
        s.images.push_back(std::move(t));
  } else {
    rep.n_splits = cfg.n_frame;
    s.images = encode_inputs(slice_between_frames(stream, frames, first, dt), rep);
  }
  s.activity =
      count_image(slice_between_frames(stream, frames, first, dt), stream.width, stream.height);
  s.frames.assign(frames.frames.begin() + first, frames.frames.begin() + first + dt + 1);
  s.alignment = sample_alignment(cfg, static_cast<int>(s.images.size()));
  return s;
}

std::vector<TrainingSample> build_windows(const EventStream& stream, const FrameSequence& frames,
                                          const TrainConfig& cfg, const GroundTruthLookup& gt) {
  cfg.validate();
  const std::size_t dt = static_cast<std::size_t>(cfg.dt);
  if (frames.size() < dt + 1) {
    std::cerr << "warning: recording has " << frames.size() << " frames, a dt=" << dt
              << " window needs " << dt + 1 << "; no windows built\n";
    return {};
  }
  validate(frames);
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i + dt < frames.size(); i += cfg.window_stride) {
    TrainingSample s = build_window(stream, frames, cfg, i);
    if (gt) s.gt = gt(i);
    if (cfg.crop > 0) crop_sample(s, cfg.crop);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TrainingSample> build_windows(const Recording& rec, const TrainConfig& cfg) {
  auto lookup = [&](std::size_t first) -> std::optional<FlowField> {
    auto it = rec.gt.find({cfg.dt, first});
    if (it == rec.gt.end()) return std::nullopt;
    return it->second;
  };
  auto windows = build_windows(rec.events, rec.frames, cfg, lookup);
  for (auto& w : windows) w.source = rec.name;
  return windows;
}

int worker_count() {
  const char* env = std::getenv("STEFLOW_NUM_WORKERS");
  if (!env) return 1;
  try {
    return std::max(1, kv_int("STEFLOW_NUM_WORKERS", env));
  } catch (const ArgumentError&) {
    std::cerr << "warning: ignoring invalid STEFLOW_NUM_WORKERS='" << env << "'\n";
    return 1;
  }
}

std::vector<TrainingSample> build_dataset(const std::vector<Recording>& recs,
                                          const TrainConfig& cfg) {
  std::vector<std::vector<TrainingSample>> parts(recs.size());
  const int workers = std::min<int>(worker_count(), static_cast<int>(recs.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < recs.size(); ++i) parts[i] = build_windows(recs[i], cfg);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(recs.size());
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < recs.size();) {
          try {
            parts[i] = build_windows(recs[i], cfg);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<TrainingSample> out;
  for (auto& p : parts)
    for (auto& s : p) out.push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'K'};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename V>
V get(std::istream& in, const fs::path& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError("truncated checkpoint " + path.string());
  return v;
}

KeyValues network_kv(const NetworkConfig& n) {
  return {{"net.base_channels", std::to_string(n.base_channels)},
          {"net.n_levels", std::to_string(n.n_levels)},
          {"net.corr_radius", std::to_string(n.corr_radius)},
          {"net.n_irr", std::to_string(n.n_irr)},
          {"net.use_convgru", n.use_convgru ? "true" : "false"},
          {"net.use_correlation", n.use_correlation ? "true" : "false"},
          {"net.use_irr", n.use_irr ? "true" : "false"},
          {"net.input_channels", std::to_string(n.input_channels)},
          {"net.residual_blocks", std::to_string(n.residual_blocks)},
          {"net.leaky_slope", format_double(n.leaky_slope)},
          {"net.residual_decoder", n.residual_decoder ? "true" : "false"}};
}

}  // namespace

fs::path metadata_path(const fs::path& path) { return fs::path(path.string() + ".meta"); }

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      put<std::int32_t>(out, p.value.c);
      put<std::int32_t>(out, p.value.h);
      put<std::int32_t>(out, p.value.w);
      out.write(reinterpret_cast<const char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write to " + path.string());
  }
  KeyValues kv = network_kv(ckpt.network);
  kv["step"] = std::to_string(ckpt.step);
  for (const auto& [k, v] : ckpt.train.to_key_values()) kv["train." + k] = v;
  kv["rep.n_splits"] = std::to_string(ckpt.representation.n_splits);
  kv["rep.sigma_floor"] = format_double(ckpt.representation.sigma_floor);
  kv["rep.width"] = std::to_string(ckpt.representation.width);
  kv["rep.height"] = std::to_string(ckpt.representation.height);
  kv["rep.kind"] = to_string(ckpt.representation.kind);
  write_key_values(kv, metadata_path(path));
}

Checkpoint load_checkpoint(const fs::path& path) {
  Checkpoint ckpt;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError(path.string() + " is not a checkpoint");
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw FormatError("corrupt parameter name in " + path.string());
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto c = get<std::int32_t>(in, path);
    const auto h = get<std::int32_t>(in, path);
    const auto w = get<std::int32_t>(in, path);
    if (c <= 0 || h <= 0 || w <= 0 || static_cast<long long>(c) * h * w > (1ll << 31))
      throw FormatError("corrupt tensor shape in " + path.string());
    Tensor<float> t(c, h, w);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw FormatError("truncated checkpoint " + path.string());
    ckpt.params.add(std::move(name), std::move(t));
  }

  const KeyValues kv = read_key_values(metadata_path(path));
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  NetworkConfig& n = ckpt.network;
  n.base_channels = kv_int("net.base_channels", need("net.base_channels"));
  n.n_levels = kv_int("net.n_levels", need("net.n_levels"));
  n.corr_radius = kv_int("net.corr_radius", need("net.corr_radius"));
  n.n_irr = kv_int("net.n_irr", need("net.n_irr"));
  n.use_convgru = kv_bool("net.use_convgru", need("net.use_convgru"));
  n.use_correlation = kv_bool("net.use_correlation", need("net.use_correlation"));
  n.use_irr = kv_bool("net.use_irr", need("net.use_irr"));
  n.input_channels = kv_int("net.input_channels", need("net.input_channels"));
  n.residual_blocks = kv_int("net.residual_blocks", need("net.residual_blocks"));
  n.leaky_slope = kv_double("net.leaky_slope", need("net.leaky_slope"));
  n.residual_decoder = kv_bool("net.residual_decoder", need("net.residual_decoder"));
  ckpt.step = kv_int64("step", need("step"));
  KeyValues train_kv;
  for (const auto& [k, v] : kv)
    if (k.rfind("train.", 0) == 0) train_kv[k.substr(6)] = v;
  ckpt.train = TrainConfig::from_key_values(train_kv);
  ckpt.representation.n_splits = kv_int("rep.n_splits", need("rep.n_splits"));
  ckpt.representation.sigma_floor = kv_double("rep.sigma_floor", need("rep.sigma_floor"));
  ckpt.representation.width = kv_int("rep.width", need("rep.width"));
  ckpt.representation.height = kv_int("rep.height", need("rep.height"));
  ckpt.representation.kind = representation_from_string(need("rep.kind"));
  return ckpt;
}

// ---------------------------------------------------------------------------
// Optimization

void Adam::step(ad::ParameterSet<float>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0f);
      v_.emplace_back(p.value.size(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr / c1);
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const float g = p.grad.data[j];
      m[j] = b1 * m[j] + (1.0f - b1) * g;
      v[j] = b2 * v[j] + (1.0f - b2) * g * g;
      p.value.data[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

double clip_gradients(ad::ParameterSet<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.grad.data) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (float& g : p.grad.data) g *= s;
  }
  return norm;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,total,photometric,smoothness,lr\n" << std::setprecision(9);
  for (const auto& r : rows)
    out << r.step << "," << r.total << "," << r.photometric << "," << r.smoothness << "," << r.lr
        << "\n";
}

namespace {

Tensor<float> flip_x(const Tensor<float>& t) {
  Tensor<float> out(t.c, t.h, t.w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) out(c, y, x) = t(c, y, t.w - 1 - x);
  return out;
}

Tensor<float> flip_y(const Tensor<float>& t) {
  Tensor<float> out(t.c, t.h, t.w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y) std::copy_n(&t(c, t.h - 1 - y, 0), t.w, &out(c, y, 0));
  return out;
}

GrayImage flip_image(const GrayImage& img, bool fx, bool fy) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = img.at(fx ? img.width - 1 - x : x, fy ? img.height - 1 - y : y);
  return out;
}

}  // namespace

TrainResult train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (dataset.empty()) throw ArgumentError("training set is empty");
  const Tensor<float>& probe = dataset[0].images.at(0);
  for (const auto& s : dataset)
    for (const auto& img : s.images)
      if (!img.same_shape(probe)) throw ArgumentError("training samples differ in shape");
  auto [net_cfg, loss_cfg] = apply_ablation(cfg, probe.c);

  SteFlowNet<float> net(net_cfg, options.initial ? *options.initial
                                                 : SteFlowNet<float>::init_parameters(net_cfg, cfg.seed));
  auto& params = net.parameters();
  Adam adam;
  std::mt19937_64 rng(cfg.seed);

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.network = net_cfg;
  ckpt.train = cfg;
  ckpt.representation.width = probe.w;
  ckpt.representation.height = probe.h;
  ckpt.representation.kind = cfg.representation;
  ckpt.representation.n_splits = cfg.n_frame % cfg.dt == 0 ? cfg.n_frame / cfg.dt : cfg.n_frame;

  if (options.out_dir) fs::create_directories(*options.out_dir);
  auto snapshot = [&](long long step) {
    ckpt.params = params;
    ckpt.step = step;
  };
  auto save = [&](const std::string& name) {
    if (!options.out_dir) return;
    save_checkpoint(ckpt, *options.out_dir / name);
    write_metrics_csv(result.metrics, *options.out_dir / "metrics.csv");
  };

  const std::size_t n = dataset.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  long long step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_for_epoch(epoch);
    for (std::size_t begin = 0; begin < n; begin += batch) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
      const std::size_t end = std::min(n, begin + batch);
      const float inv = 1.0f / static_cast<float>(end - begin);
      params.zero_grad();
      MetricsRow row;
      row.step = step + 1;
      row.lr = lr;
      for (std::size_t b = begin; b < end; ++b) {
        const TrainingSample& s = dataset[order[b]];
        std::vector<Tensor<float>> images = s.images;
        std::vector<GrayImage> frames = s.frames;
        if (cfg.augment) {
          const bool fx = (rng() & 1u) != 0;
          const bool fy = (rng() & 1u) != 0;
          for (auto& img : images) {
            if (fx) img = flip_x(img);
            if (fy) img = flip_y(img);
          }
          for (auto& f : frames) f = flip_image(f, fx, fy);
        }
        ad::Graph<float> g;
        const auto irr = net.irr_estimate(g, images);
        // A summed input yields one prediction, supervised by the whole window.
        const std::vector<WindowTarget> alignment =
            net_cfg.use_convgru ? s.alignment
                                : std::vector<WindowTarget>{{0, static_cast<int>(frames.size()) - 1}};
        auto [loss, br] = total_loss<float>(irr, frames, alignment, loss_cfg);
        g.backward(ad::scale(loss, inv));
        g.flush_parameter_grads();
        row.total += br.total * inv;
        row.photometric += br.photometric * inv;
        row.smoothness += br.smoothness * inv;
      }
      const double norm = clip_gradients(params, cfg.grad_clip);
      if (!std::isfinite(row.total) || !std::isfinite(norm)) {
        result.diverged = true;
        result.message = "non-finite loss or gradient at step " + std::to_string(step + 1) +
                         "; keeping parameters of step " + std::to_string(step);
        snapshot(step);
        save("model.ckpt");
        return result;
      }
      adam.step(params, lr);
      ++step;
      result.metrics.push_back(row);
      if (options.on_step) options.on_step(row);
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        snapshot(step);
        save("checkpoint_" + std::to_string(step) + ".ckpt");
      }
    }
  }
  snapshot(step);
  save("model.ckpt");
  return result;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

namespace {

Tensor<float> pad_to(const Tensor<float>& t, int h, int w) {
  if (t.h == h && t.w == w) return t;
  Tensor<float> out(t.c, h, w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y) std::copy_n(&t(c, y, 0), t.w, &out(c, y, 0));
  return out;
}

FlowField unpad(const Tensor<float>& flow, int h, int w) {
  Tensor<float> t(2, h, w);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < h; ++y) std::copy_n(&flow(c, y, 0), w, &t(c, y, 0));
  return to_flow_field(t);
}

template <typename F>
auto run_padded(SteFlowNet<float>& net, const std::vector<Tensor<float>>& images, F&& extract) {
  if (images.empty()) throw ArgumentError("no event images");
  const int m = NetworkConfig::size_multiple();
  const int h = images[0].h;
  const int w = images[0].w;
  const int ph = (h + m - 1) / m * m;
  const int pw = (w + m - 1) / m * m;
  std::vector<Tensor<float>> padded;
  for (const auto& img : images) padded.push_back(pad_to(img, ph, pw));
  ad::Graph<float> g(false);
  const auto irr = net.irr_estimate(g, padded);
  return extract(irr, h, w);
}

}  // namespace

FlowField predict_flow(SteFlowNet<float>& net, const std::vector<Tensor<float>>& images) {
  return run_padded(net, images, [](const IrrResult<float>& r, int h, int w) {
    return unpad(r.final_flow.value(), h, w);
  });
}

std::vector<FlowField> predict_intermediate(SteFlowNet<float>& net,
                                            const std::vector<Tensor<float>>& images) {
  return run_padded(net, images, [](const IrrResult<float>& r, int h, int w) {
    std::vector<FlowField> out;
    for (const auto& pyr : r.accumulated.back()) out.push_back(unpad(pyr.flows[kLevels - 1].value(), h, w));
    return out;
  });
}

EvalReport evaluate(SteFlowNet<float>& net, const std::vector<TrainingSample>& samples, int crop,
                    std::vector<FlowField>* predictions) {
  EvalReport report;
  for (const auto& original : samples) {
    if (!original.gt) continue;
    TrainingSample s = original;
    if (crop > 0) crop_sample(s, crop);
    const FlowField pred = predict_flow(net, s.images);
    report.per_sample.push_back(evaluate_sample(pred, *s.gt, active_mask(*s.gt, s.activity)));
    if (predictions) predictions->push_back(pred);
  }
  report.finalize();
  return report;
}

}  // namespace steflow

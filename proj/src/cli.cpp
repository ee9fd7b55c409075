#include "steflow/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "steflow/errors.hpp"
#include "steflow/evaluation.hpp"
#include "steflow/mvsec.hpp"
#include "steflow/trainer.hpp"

namespace steflow {

namespace fs = std::filesystem;

namespace {

std::vector<Displacement> parse_schedule(const std::string& key, const std::string& value) {
  // "u,v" or "u,v; u,v; ..."
  std::vector<Displacement> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto parts = kv_double_list(key, item);
    if (parts.empty()) continue;
    if (parts.size() != 2) throw ArgumentError(key + " entries must be 'u,v'");
    out.push_back({parts[0], parts[1]});
  }
  if (out.empty()) throw ArgumentError(key + " is empty");
  return out;
}

}  // namespace

SynthConfig SynthConfig::from_key_values(const KeyValues& kv) {
  SynthConfig c;
  SceneConfig& s = c.scene;
  for (const auto& [k, v] : kv) {
    if (k == "width") s.width = kv_int(k, v);
    else if (k == "height") s.height = kv_int(k, v);
    else if (k == "texture_seed") {
      s.texture_seed = static_cast<std::uint64_t>(kv_int64(k, v));
      c.random_texture = false;
    }
    else if (k == "texture_scale") s.texture_scale = kv_double(k, v);
    else if (k == "texture_period") s.texture_period = kv_int(k, v);
    else if (k == "flow") s.flow = parse_schedule(k, v);
    else if (k == "n_frames") s.n_frames = kv_int(k, v);
    else if (k == "frame_dt") s.frame_dt = kv_double(k, v);
    else if (k == "contrast_threshold") s.contrast_threshold = kv_double(k, v);
    else if (k == "bandwidth_limit") s.bandwidth_limit = kv_double(k, v);
    else if (k == "noise_rate") s.noise_rate = kv_double(k, v);
    else if (k == "noise_seed") s.noise_seed = static_cast<std::uint64_t>(kv_int64(k, v));
    else if (k == "log_eps") s.log_eps = kv_double(k, v);
    else if (k == "n_sequences") c.n_sequences = kv_int(k, v);
    else if (k == "random_flow_max") c.random_flow_max = kv_double(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(kv_int64(k, v));
    else if (k == "substeps") c.substeps = kv_int(k, v);
    else if (k == "gt_spans") c.gt_spans = kv_int_list(k, v);
    else throw ArgumentError("unknown gen-synth key '" + k + "'");
  }
  if (c.n_sequences < 1) throw ArgumentError("n_sequences must be >= 1");
  if (c.substeps < 1) throw ArgumentError("substeps must be >= 1");
  if (c.random_flow_max < 0) throw ArgumentError("random_flow_max must be >= 0");
  s.validate();
  return c;
}

SceneConfig SynthConfig::scene_for(int i) const {
  SceneConfig s = scene;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(i));
  if (random_texture) s.texture_seed = rng();
  if (random_flow_max > 0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double x, y;
    do {
      x = u(rng);
      y = u(rng);
    } while (x * x + y * y > 1.0);
    s.flow = {{x * random_flow_max, y * random_flow_max}};
  }
  s.noise_seed = scene.noise_seed + static_cast<std::uint64_t>(i);
  return s;
}

namespace {

struct Options {
  fs::path config, out, data, checkpoint, report, events, frames, in, gt, dump, pred_dir;
  int dt = 0;
  int crop = -1;
  std::size_t frame = 0;
  long long first = -1, last = -1;
  double max_mag = 0.0;
};

void cmd_gen_synth(const Options& o) {
  const SynthConfig cfg = SynthConfig::from_key_values(read_key_values(o.config));
  for (int i = 0; i < cfg.n_sequences; ++i) {
    const SceneConfig scene = cfg.scene_for(i);
    std::vector<int> spans;
    for (int dt : cfg.gt_spans)
      if (dt >= 1 && dt < scene.n_frames) spans.push_back(dt);
    std::ostringstream name;
    name << "seq_" << std::setw(4) << std::setfill('0') << i;
    const Recording rec = make_recording(scene, simulate(scene, cfg.substeps), spans, name.str());
    save_recording(rec, o.out / name.str());
  }
  std::cerr << "wrote " << cfg.n_sequences << " sequence(s) to " << o.out.string() << "\n";
}

void cmd_convert(const Options& o) {
  ConvertOptions opts;
  if (o.first >= 0 || o.last >= 0) {
    if (o.first < 0 || o.last <= o.first) throw UsageError("--first and --last must form a range");
    opts.frame_range = std::make_pair(static_cast<std::size_t>(o.first), static_cast<std::size_t>(o.last));
  }
  std::optional<fs::path> gt;
  if (!o.gt.empty()) gt = o.gt;
  const ConvertResult r = convert_mvsec(o.events, o.frames, o.out, opts, gt);
  std::cerr << "converted " << r.event_count << " events, " << r.frame_count << " frames, "
            << r.flow_count << " flow files\n";
}

void cmd_train(const Options& o) {
  const TrainConfig cfg = TrainConfig::load(o.config);
  const auto recs = load_dataset(o.data);
  const auto samples = build_dataset(recs, cfg);
  if (samples.empty()) throw ValidationError("no training windows in " + o.data.string());
  TrainOptions opts;
  opts.out_dir = o.out;
  opts.on_step = [](const MetricsRow& r) {
    if (r.step % 50 == 0)
      std::cerr << "step " << r.step << " loss " << r.total << " lr " << r.lr << "\n";
  };
  const TrainResult r = train(samples, cfg, opts);
  if (r.diverged) throw ValidationError(r.message);
  std::cerr << "trained " << r.checkpoint.step << " steps; checkpoint "
            << (o.out / "model.ckpt").string() << "\n";
}

SteFlowNet<float> load_model(const fs::path& path, Checkpoint& ckpt) {
  ckpt = load_checkpoint(path);
  return SteFlowNet<float>(ckpt.network, ckpt.params);
}

TrainConfig window_config(const Checkpoint& ckpt, int dt) {
  TrainConfig cfg = ckpt.train;
  if (dt != 0 && dt != cfg.dt) {
    if (dt != 1 && dt != 4) throw UsageError("--dt must be 1 or 4");
    cfg.n_frame = cfg.n_frame / cfg.dt * dt;
    cfg.dt = dt;
    if (cfg.dt == 1 && cfg.ablation == Ablation::no_mil) cfg.ablation = Ablation::full;
  }
  cfg.crop = 0;
  cfg.window_stride = 1;
  return cfg;
}

void cmd_eval(const Options& o) {
  Checkpoint ckpt;
  SteFlowNet<float> net = load_model(o.checkpoint, ckpt);
  const TrainConfig cfg = window_config(ckpt, o.dt);
  std::vector<TrainingSample> samples;
  for (auto& s : build_dataset(load_dataset(o.data), cfg))
    if (s.gt) samples.push_back(std::move(s));
  if (samples.empty())
    throw ValidationError("no windows with dt=" + std::to_string(cfg.dt) + " ground truth in " +
                          o.data.string());
  int crop = o.crop;
  if (crop < 0) {
    const int w = samples[0].activity.width;
    const int h = samples[0].activity.height;
    crop = (w >= 256 && h >= 256) ? 256 : 0;
  }
  std::vector<FlowField> preds;
  const EvalReport report = evaluate(net, samples, crop, &preds);

  if (o.report.has_parent_path()) fs::create_directories(o.report.parent_path());
  std::ofstream out(o.report);
  if (!out) throw IoError("cannot write " + o.report.string());
  out << "sample,source,first_frame,aee,outlier_pct,n_active\n" << std::setprecision(9);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& m = report.per_sample[i];
    out << i << "," << samples[i].source << "," << samples[i].first_frame << "," << m.aee << ","
        << m.outlier_pct << "," << m.n_active << "\n";
  }
  out << "all,,," << report.aee << "," << report.outlier_pct << "," << report.n_active << "\n";
  if (!out) throw IoError("short write to " + o.report.string());
  if (!o.pred_dir.empty()) {
    fs::create_directories(o.pred_dir);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      std::ostringstream name;
      name << "pred_" << std::setw(6) << std::setfill('0') << i << ".flo";
      write_flow(preds[i], o.pred_dir / name.str());
    }
  }
  std::cerr << "AEE " << report.aee << " px, outliers " << report.outlier_pct << "% over "
            << samples.size() << " windows\n";
}

void cmd_infer(const Options& o) {
  Checkpoint ckpt;
  SteFlowNet<float> net = load_model(o.checkpoint, ckpt);
  const TrainConfig cfg = window_config(ckpt, o.dt);
  const EventStream events = read_events(o.events);
  const FrameSequence frames = read_frames(o.frames);
  validate(frames);
  const TrainingSample s = build_window(events, frames, cfg, o.frame);
  if (s.images[0].c != net.config().input_channels)
    throw ValidationError("checkpoint expects " + std::to_string(net.config().input_channels) +
                          " input channels");
  if (o.dump.empty()) {
    write_flow(predict_flow(net, s.images), o.out);
    return;
  }
  const auto flows = predict_intermediate(net, s.images);
  write_flow(flows.back(), o.out);
  fs::create_directories(o.dump);
  for (std::size_t t = 0; t < flows.size(); ++t) {
    std::ostringstream name;
    name << "step_" << std::setw(3) << std::setfill('0') << t;
    write_flow(flows[t], o.dump / (name.str() + ".flo"));
    write_image(visualize_flow(flows[t]), o.dump / (name.str() + (png_support_available() ? ".png" : ".ppm")));
  }
}

void cmd_viz_flow(const Options& o) {
  write_image(visualize_flow(read_flow(o.in), o.max_mag), o.out);
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Event-camera optical flow: synthesis, conversion, training and evaluation",
               "ste-flow"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-synth", "Generate synthetic event recordings");
  gen->add_option("--config", o.config, "Scene config (key = value)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* conv = app.add_subcommand("convert", "Convert an MVSEC-style HDF5 recording");
  conv->add_option("--events", o.events, "HDF5 file with davis/left/events")->required();
  conv->add_option("--frames", o.frames, "HDF5 file with davis/left/image_raw")->required();
  conv->add_option("--gt", o.gt, "HDF5 file with davis/left/flow_dist");
  conv->add_option("--first", o.first, "First frame kept");
  conv->add_option("--last", o.last, "One past the last frame kept");
  conv->add_option("--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Self-supervised training");
  tr->add_option("--config", o.config, "Training config (key = value)")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Recording or directory of recordings")->required();
  tr->add_option("--out", o.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "AEE and outlier metrics against ground truth");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Recording or directory of recordings")->required();
  ev->add_option("--dt", o.dt, "Window span in frame intervals")->check(CLI::IsMember({1, 4}));
  ev->add_option("--report", o.report, "CSV report path")->required();
  ev->add_option("--crop", o.crop, "Center crop size; default 256 when the input is large enough");
  ev->add_option("--pred-dir", o.pred_dir, "Also write predicted flows here");

  auto* inf = app.add_subcommand("infer", "Predict flow for one window");
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  inf->add_option("--events", o.events, "Native event file")->required();
  inf->add_option("--frames", o.frames, "Frame directory")->required();
  inf->add_option("--frame", o.frame, "Index of the window's first frame");
  inf->add_option("--dt", o.dt, "Window span in frame intervals")->check(CLI::IsMember({1, 4}));
  inf->add_option("--out", o.out, "Output flow file")->required();
  inf->add_option("--dump-intermediate", o.dump, "Directory for per-timestep flows and images");

  auto* viz = app.add_subcommand("viz-flow", "Render a flow file as a color image");
  viz->add_option("--in", o.in, "Flow file")->required();
  viz->add_option("--out", o.out, "PNG or PPM output")->required();
  viz->add_option("--max-mag", o.max_mag, "Magnitude of full saturation; default field maximum");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) cmd_gen_synth(o);
    else if (conv->parsed()) cmd_convert(o);
    else if (tr->parsed()) cmd_train(o);
    else if (ev->parsed()) cmd_eval(o);
    else if (inf->parsed()) cmd_infer(o);
    else if (viz->parsed()) cmd_viz_flow(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace steflow

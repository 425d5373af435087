// Command-line front end. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvflow/mvflow.hpp"

namespace fs = std::filesystem;
using namespace mvflow;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string config;
  std::string out = "out";
};

Config base_config(const Globals& g) {
  Config c = g.config.empty() ? Config{} : load_config(g.config);
  return c;
}

// Parameters and model config: from a checkpoint when given, else a seeded initialization.
std::pair<ParamSet<float>, Config> load_model(const std::string& checkpoint, const Globals& g) {
  if (checkpoint.empty()) {
    Config c = base_config(g);
    std::cerr << "note: no --checkpoint, using untrained parameters (seed " << g.seed << ")\n";
    return {init_model_params(c.model, g.seed), c};
  }
  auto ck = load_checkpoint(checkpoint);
  Config c = parse_config(ck.config_text);
  check_compatible(ck.params, c.model);
  return {std::move(ck.params), c};
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_iters(const std::string& s) {
  std::vector<int> out;
  for (const auto& v : split(s)) {
    try {
      std::size_t pos;
      out.push_back(std::stoi(v, &pos));
      if (pos != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw UsageError("--iters expects comma-separated integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("--iters is empty");
  return out;
}

// One sample from a dataset tree, or a synthetic one.
Sample pick_sample(const std::string& data, int index, const Globals& g, const Config& c) {
  if (data.empty()) return synth_sample(g.seed, c.synth);
  auto all = load_dataset(data);
  if (index < 0 || index >= static_cast<int>(all.size()))
    throw UsageError("--index " + std::to_string(index) + " outside dataset of " + std::to_string(all.size()));
  return all[index];
}

int run(int argc, char** argv) {
  CLI::App app{"Optical flow with a compressed-video motion-vector prior"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->default_val(1);
  app.add_option("--config", g.config, "Key-value config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory")->default_val("out");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset tree");
  int synth_count = 8;
  synth->add_option("--count", synth_count, "Number of samples")->default_val(8)->check(CLI::PositiveNumber);

  // rasterize
  auto* rast = app.add_subcommand("rasterize", "Sidecar -> dense .flo and mask");
  std::string rast_in;
  int rast_frame = -1;
  bool no_clip = false;
  rast->add_option("sidecar", rast_in, "mvsidecar/1 file")->required();
  rast->add_option("--frame", rast_frame, "Frame entry to rasterize (required for multi-frame files)");
  rast->add_flag("--no-clip", no_clip, "Reject blocks that extend outside the frame");

  // shared model options
  std::string checkpoint, data, image1, image2, mvs, prev_flow, gt_flow, init = "mvcm";
  int index = 0, iters = -1;
  auto add_inputs = [&](CLI::App* sc) {
    sc->add_option("--checkpoint", checkpoint, "Trained checkpoint");
    sc->add_option("--data", data, "Dataset tree with manifest.jsonl");
    sc->add_option("--index", index, "Sample index in --data")->default_val(0);
    sc->add_option("--image1", image1, "First frame PNG");
    sc->add_option("--image2", image2, "Second frame PNG");
    sc->add_option("--mvs", mvs, "Motion-vector sidecar for the pair");
    sc->add_option("--prev-flow", prev_flow, "Previous pair's flow (.flo), for warm-start strategies");
    sc->add_option("--gt", gt_flow, "Ground-truth .flo, to report AEPE");
  };

  auto* mvcm_cmd = app.add_subcommand("mvcm", "Run the motion-vector converter on one sample");
  add_inputs(mvcm_cmd);
  auto* est = app.add_subcommand("estimate", "Full pipeline on one sample");
  add_inputs(est);
  est->add_option("--init", init, "zero | warm_start | mvcm | mvcm_warm_start | raw_mv")->default_val("mvcm");
  est->add_option("--iters", iters, "Refinement iterations (default: eval_iters)");

  // eval
  auto* ev = app.add_subcommand("eval", "Strategy x iteration benchmark grid");
  std::string ev_strategies = "zero,mvcm", ev_iters = "1,2,4,8,16";
  int ev_samples = 0, timing_runs = 5;
  bool no_render = false;
  ev->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  ev->add_option("--data", data, "Dataset tree (default: seeded synthetic eval set)");
  ev->add_option("--strategies", ev_strategies, "Comma-separated init strategies")->default_val("zero,mvcm");
  ev->add_option("--iters", ev_iters, "Comma-separated iteration counts")->default_val("1,2,4,8,16");
  ev->add_option("--samples", ev_samples, "Synthetic eval samples (default: eval_samples)");
  ev->add_option("--timing-runs", timing_runs, "Timed runs per cell")->default_val(5);
  ev->add_flag("--no-render", no_render, "Skip flow and error renders");

  // train
  auto* tr = app.add_subcommand("train", "Train and write a checkpoint");
  std::string init_ck;
  int steps = -1;
  tr->add_option("--data", data, "Dataset tree (default: synthetic samples)");
  tr->add_option("--steps", steps, "Override total_steps");
  tr->add_option("--init-checkpoint", init_ck, "Start from these parameters (e.g. for warm_finetune)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full pipeline in 64-bit");
  int gc_size = 8, gc_checks = 8;
  gc->add_option("--size", gc_size, "Input size")->default_val(8);
  gc->add_option("--checks", gc_checks, "Elements checked per tensor (0 = all)")->default_val(8);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const fs::path out = g.out;

  if (synth->parsed()) {
    Config c = base_config(g);
    std::vector<Sample> samples;
    for (int i = 0; i < synth_count; ++i) samples.push_back(synth_sample(mix_seed(g.seed, i), c.synth));
    write_dataset(samples, out);
    std::cout << "wrote " << synth_count << " samples to " << out.string() << "\n";
    return 0;
  }

  if (rast->parsed()) {
    auto frames = read_sidecars(rast_in);
    if (rast_frame < 0 && frames.size() != 1)
      throw UsageError("sidecar has " + std::to_string(frames.size()) + " frames; pick one with --frame");
    const int f = rast_frame < 0 ? 0 : rast_frame;
    if (f >= static_cast<int>(frames.size())) throw UsageError("--frame " + std::to_string(f) + " out of range");
    auto [flow, mask] = rasterize(frames[f], {!no_clip});
    write_flo(flow, out / "flow.flo");
    write_mask_png(mask, out / "mask.png");
    std::cout << "coverage " << mask.mean() << "\n";
    return 0;
  }

  if (mvcm_cmd->parsed() || est->parsed()) {
    const auto strategy = est->parsed() ? parse_strategy(init) : InitStrategy::mvcm;
    if (needs_prev_flow(strategy) && prev_flow.empty() && data.empty())
      throw UsageError("init strategy " + init + " requires --prev-flow");
    auto [params, c] = load_model(checkpoint, g);
    Sample s;
    if (!image1.empty() || !image2.empty() || !mvs.empty()) {
      if (image1.empty() || image2.empty() || mvs.empty())
        throw UsageError("--image1, --image2 and --mvs must be given together");
      s.image1 = from_image8(read_png(image1));
      s.image2 = from_image8(read_png(image2));
      std::tie(s.mv_flow, s.mv_mask) = rasterize(read_sidecar(mvs));
      s.gt_flow = gt_flow.empty() ? FlowField(s.width(), s.height()) : read_flo(gt_flow);
      s.gt_valid = Mask(s.width(), s.height(), 1.0f);
    } else {
      s = pick_sample(data, index, g, c);
      if (!gt_flow.empty()) s.gt_flow = read_flo(gt_flow);
    }
    if (!prev_flow.empty()) s.prev_flow = read_flo(prev_flow);
    if (needs_prev_flow(strategy) && !s.prev_flow) throw UsageError("init strategy " + init + " requires --prev-flow");
    validate(s);
    const bool have_gt = !gt_flow.empty() || image1.empty();

    if (mvcm_cmd->parsed()) {
      auto e = estimate(s, InitStrategy::mvcm, 0, params, c.model);
      write_flo(*e.mvcm_full, out / "mvcm.flo");
      write_png(render_flow(*e.mvcm_full), out / "mvcm.png");
      if (have_gt) std::printf("mvcm AEPE %.4f  raw MV AEPE %.4f\n", aepe(*e.mvcm_full, s.gt_flow, s.gt_valid),
                               aepe(s.mv_flow, s.gt_flow, s.gt_valid));
      return 0;
    }
    const int n = iters < 0 ? c.train.eval_iters : iters;
    auto e = estimate(s, strategy, n, params, c.model);
    write_flo(e.refined.full, out / "flow.flo");
    write_png(render_flow(e.refined.full), out / "flow.png");
    if (have_gt) {
      write_png(render_error_map(e.refined.full, s.gt_flow, s.gt_valid), out / "error.png");
      std::printf("%s %d iterations: AEPE %.4f F1 %.4f\n", to_string(strategy).c_str(), n,
                  aepe(e.refined.full, s.gt_flow, s.gt_valid), f1_outlier(e.refined.full, s.gt_flow, s.gt_valid));
    }
    return 0;
  }

  if (ev->parsed()) {
    auto [params, c] = load_model(checkpoint, g);
    std::vector<InitStrategy> strategies;
    for (const auto& s : split(ev_strategies)) strategies.push_back(parse_strategy(s));
    const auto counts = parse_iters(ev_iters);
    std::vector<Sample> samples = data.empty() ? synth_eval_set(c, ev_samples > 0 ? ev_samples : c.train.eval_samples)
                                               : load_dataset(data);
    BenchmarkOptions opt{timing_runs, no_render ? fs::path() : out / "renders"};
    auto rep = run_benchmark(samples, strategies, counts, params, c.model, opt);
    detail::write_file_bytes(out / "eval.jsonl", rep.to_jsonl());
    std::cout << rep.to_table();
    return 0;
  }

  if (tr->parsed()) {
    Config c = base_config(g);
    c.train.seed = g.seed;
    if (steps >= 0) c.train.total_steps = steps;
    validate(c);
    std::optional<std::vector<Sample>> dataset;
    if (!data.empty()) dataset = load_dataset(data);
    std::optional<ParamSet<float>> start;
    if (!init_ck.empty()) start = load_checkpoint(init_ck).params;
    std::string curve = "step,loss\n";
    TrainHooks hooks{[&](int step, double loss) {
                       curve += std::to_string(step) + "," + detail::fmt_num(loss) + "\n";
                       if (step % 100 == 0) std::printf("step %d loss %.4f\n", step, loss);
                     },
                     out};
    auto r = train(c, dataset ? &*dataset : nullptr, start, hooks);
    save_checkpoint(r.checkpoint, out / "checkpoint.bin");
    detail::write_file_bytes(out / "loss.csv", curve);
    std::string evals = "step,aepe\n";
    for (auto [s, a] : r.evals) evals += std::to_string(s) + "," + detail::fmt_num(a) + "\n";
    if (!r.evals.empty()) detail::write_file_bytes(out / "eval.csv", evals);
    std::cout << "wrote " << (out / "checkpoint.bin").string() << "\n";
    return 0;
  }

  if (gc->parsed()) {
    Config c = base_config(g);
    const int R = c.model.scale();
    if (gc_size % R) throw UsageError("--size must be divisible by feature_scale " + std::to_string(R));
    SynthConfig sc = c.synth;
    sc.width = sc.height = gc_size;
    sc.block_size = R;
    const Sample s = synth_sample(g.seed, sc);
    const auto params = init_model_params(c.model, g.seed).cast<double>();
    auto fn = [&](Tape<double>& t, const ParamSet<double>& p) {
      Bound<double> b{t, p};
      auto o = model_forward(b, s, InitStrategy::mvcm_warm_start, 2, c.model);
      std::vector<Var<double>> flows{*o.mvcm_full};
      for (auto& f : o.refined.coarse) flows.push_back(upsample_bilinear(f, R, double(R)));
      return sequence_loss(flows, s.gt_flow.t.cast<double>(), s.gt_valid.t.cast<double>(), c.train.loss_gamma);
    };
    GradCheckOptions opt;
    opt.max_checks_per_param = static_cast<std::size_t>(gc_checks);
    opt.seed = g.seed;
    auto rep = grad_check(fn, params, opt);
    for (const auto& p : rep.params)
      std::printf("%-28s checked %3zu excluded %2zu max_rel_err %.3e\n", p.name.c_str(), p.checked, p.excluded,
                  p.max_rel_error);
    std::cout << rep.summary() << "\n";
    return rep.passed ? 0 : 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

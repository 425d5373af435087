// Synthesizes one frame pair with motion vectors, runs the MVCM-initialized
// refiner on it and writes the estimate next to the ground truth.

#include <cstdio>
#include <filesystem>

#include "mvflow/mvflow.hpp"

int main(int argc, char** argv) {
  using namespace mvflow;
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_out";
  std::filesystem::create_directories(out);

  Config cfg;
  const Sample s = synth_sample(7, cfg.synth);
  const ParamSet<float> params = init_model_params(cfg.model, 7);  // untrained; load_checkpoint() for real use

  for (auto strategy : {InitStrategy::zero, InitStrategy::raw_mv, InitStrategy::mvcm}) {
    const auto e = estimate(s, strategy, 4, params, cfg.model);
    std::printf("%-8s AEPE %.3f\n", to_string(strategy).c_str(), aepe(e.refined.full, s.gt_flow, s.gt_valid));
    write_flo(e.refined.full, out / (to_string(strategy) + ".flo"));
    write_png(render_flow(e.refined.full), out / (to_string(strategy) + ".png"));
  }
  write_png(render_flow(s.gt_flow), out / "gt.png");
  write_png(to_image8(s.image1), out / "frame1.png");
  std::printf("wrote results to %s\n", out.string().c_str());
  return 0;
}

#include <CLI11.hpp>

#include "app.hpp"

using namespace lvseg;

int main(int argc, char** argv) {
  CLI::App cli{"Semi-automated 4D left-ventricle segmentation of 3D echo sequences"};
  cli.require_subcommand(1);

  app::SegmentArgs seg;
  std::string config, truth;
  auto* segment = cli.add_subcommand("segment", "Segment a 4D study from its axis and seed contours");
  segment->add_option("--volume", seg.volume, "Volume header (JSON)")->required();
  segment->add_option("--annotation", seg.annotation, "Annotation JSON")->required();
  segment->add_option("--theta-d", seg.theta_d, "Angular spacing of the temporal subset, degrees")->capture_default_str();
  segment->add_option("--spatial-theta-d", seg.spatial_theta_d, "Angular spacing of the ED/ES segmentation, degrees")
      ->capture_default_str();
  segment->add_option("--config", config, "Registration config (JSON)");
  segment->add_option("--out", seg.out, "Output directory")->required();
  segment->add_option("--truth", truth, "Truth mesh directory; adds report.json");

  std::string spec;
  std::string phantom_out;
  std::uint64_t seed = 0;
  auto* phantom = cli.add_subcommand("phantom", "Generate a synthetic study");
  phantom->add_option("spec", spec, "Suite name (static, beating, bent, lowsnr) or spec JSON")->required();
  phantom->add_option("--out", phantom_out, "Output directory")->required();
  auto* seed_opt = phantom->add_option("--seed", seed, "Override the speckle RNG seed");

  std::string pred_dir, truth_dir, eval_out;
  auto* evaluate = cli.add_subcommand("evaluate", "Compare predicted meshes with truth meshes");
  evaluate->add_option("--pred", pred_dir, "Directory of predicted frame_*.obj (or a segment output)")->required();
  evaluate->add_option("--truth", truth_dir, "Directory of truth frame_*.obj")->required();
  evaluate->add_option("--out", eval_out, "Report directory")->required();

  std::string exp_name, exp_out;
  int stride = 0;
  auto* experiment = cli.add_subcommand("experiment", "Run a robustness or comparison experiment on the phantoms");
  experiment->add_option("name", exp_name,
                         "angular-spacing | axis-perturbation | contour-perturbation | ellipsoid-baseline | "
                         "method-comparison")
      ->required();
  experiment->add_option("--out", exp_out, "Output directory")->required();
  experiment->add_option("--frame-stride", stride, "Sample every n-th phantom frame (0 = experiment default)");

  std::string data_root, work_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve = cli.add_subcommand("serve", "HTTP service for the annotator UI");
  serve->add_option("--data", data_root, "Directory of studies")->required();
  serve->add_option("--work", work_dir, "Job and annotation directory (default <data>/_service)");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors are validation failures too.
    const int code = cli.exit(e);
    return code == 0 ? 0 : app::kValidation;
  }

  if (segment->parsed()) {
    if (!config.empty()) seg.config = config;
    if (!truth.empty()) seg.truth = truth;
    return app::cmd_segment(seg);
  }
  if (phantom->parsed())
    return app::cmd_phantom(spec, phantom_out, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
  if (evaluate->parsed()) return app::cmd_evaluate(pred_dir, truth_dir, eval_out);
  if (experiment->parsed()) return app::cmd_experiment(exp_name, exp_out, stride);
  if (serve->parsed()) {
    return app::guarded([&] {
      app::Service service(data_root, work_dir.empty() ? std::filesystem::path(data_root) / "_service" : std::filesystem::path(work_dir));
      std::cout << "serving " << data_root << " on http://" << host << ":" << port << "\n" << std::flush;
      service.listen(host, port);
      return int(app::kOk);
    });
  }
  return app::kValidation;
}

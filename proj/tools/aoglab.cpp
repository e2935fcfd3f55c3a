// Command-line front end: mine, parse, evaluate, synth, serve.

#include "aoglab/aog.hpp"
#include "aoglab/error.hpp"
#include "aoglab/eval.hpp"
#include "aoglab/miner.hpp"
#include "aoglab/parser.hpp"
#include "aoglab/service.hpp"
#include "aoglab/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace aoglab;

namespace {

int run_mine(const std::string& manifest, const std::string& out, std::optional<int> nk, std::optional<int> half_extent) {
  const auto ds = load_dataset(manifest);
  MinerConfig config;
  if (nk) config.default_patterns_per_layer = *nk;
  config.half_extent_override = half_extent;
  const SemanticPartAOG aog = mine(*ds, config);
  save_aog(aog, out);
  std::cout << "mined " << aog.templates.size() << " template(s), " << aog.active_count() << " pattern(s) -> " << out << "\n";
  return 0;
}

int run_parse(const std::string& manifest, const std::string& aog_path, const std::string& image, const std::string& out,
              bool brute_force) {
  const auto ds = load_dataset(manifest);
  const SemanticPartAOG aog = load_aog(aog_path);
  aog.validate_against(ds->manifest.layer_geometries);
  const ImageFrame frame = ImageFrame::from(ds->manifest.record(image));
  const FeatureMapSet& fm = ds->features_for(image);
  const ParseTree tree = brute_force ? brute_force_parse(fm, aog, frame) : parse(fm, aog, frame);
  write_text_file(out, to_json(tree).dump(2) + "\n");
  std::cout << image << ": template " << tree.template_id << ", center (" << tree.part_center.x() << ", " << tree.part_center.y()
            << "), score " << tree.total_score << "\n";
  return 0;
}

int run_evaluate(const std::string& manifest, const std::string& aog_path, const std::string& out, const std::string& rows,
                 const std::string& split) {
  const auto ds = load_dataset(manifest);
  const EvalReport report = evaluate(load_aog(aog_path), *ds, split);
  write_text_file(out, report.to_csv());
  if (!rows.empty()) write_text_file(rows, report.rows_csv());
  std::cout << report.to_markdown();
  for (const auto& f : report.failures) std::cerr << "failed: " << f.image_id << ": " << f.error << "\n";
  return report.failures.empty() ? 0 : 3;
}

int run_synth(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  SyntheticConfig config;
  if (!config_path.empty()) config = SyntheticConfig::from_json(Json::parse(read_text_file(config_path)));
  if (seed) config.seed = *seed;
  const SyntheticDataset synth = generate_synthetic(config);
  synth.write(out);
  std::cout << "wrote " << synth.manifest.records.size() << " images -> " << out << "\n";
  return 0;
}

int run_serve(int port, std::string data_root, const std::string& host) {
  if (data_root.empty())
    if (const char* env = std::getenv("AOGLAB_DATA_ROOT")) data_root = env;
  if (data_root.empty()) throw ValidationError("data_root", "pass --data-root or set AOGLAB_DATA_ROOT");
  Service service({data_root, "*", {}});
  HttpServer server(service);
  const int bound = server.bind(host, port);
  std::cout << "serving " << data_root << " on http://" << host << ":" << bound << "/v1" << std::endl;
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"And-Or graph part localization"};
  app.require_subcommand(1);

  std::string manifest, out, aog_path, image, rows, config_path, data_root, host = "127.0.0.1", split = "test";
  std::optional<int> nk, half_extent;
  std::optional<std::uint64_t> seed;
  bool brute_force = false;
  int port = 8080;

  auto* mine_cmd = app.add_subcommand("mine", "Mine an AOG from the annotated training split");
  mine_cmd->add_option("--manifest", manifest)->required();
  mine_cmd->add_option("--out", out)->required();
  mine_cmd->add_option("--nk", nk, "patterns per layer");
  mine_cmd->add_option("--half-extent", half_extent, "deformation half extent in cells");

  auto* parse_cmd = app.add_subcommand("parse", "Parse one image");
  parse_cmd->add_option("--manifest", manifest)->required();
  parse_cmd->add_option("--aog", aog_path)->required();
  parse_cmd->add_option("--image", image)->required();
  parse_cmd->add_option("--out", out)->required();
  parse_cmd->add_flag("--brute-force", brute_force, "exhaustive enumeration instead of the fast parser");

  auto* eval_cmd = app.add_subcommand("evaluate", "Normalized-distance report over a split");
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--aog", aog_path)->required();
  eval_cmd->add_option("--out", out)->required();
  eval_cmd->add_option("--rows", rows, "per-image CSV");
  eval_cmd->add_option("--split", split);

  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-ground-truth dataset");
  synth_cmd->add_option("--config", config_path, "JSON config; defaults when omitted");
  synth_cmd->add_option("--out", out)->required();
  synth_cmd->add_option("--seed", seed);

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--data-root", data_root);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mine_cmd) return run_mine(manifest, out, nk, half_extent);
    if (*parse_cmd) return run_parse(manifest, aog_path, image, out, brute_force);
    if (*eval_cmd) return run_evaluate(manifest, aog_path, out, rows, split);
    if (*synth_cmd) return run_synth(config_path, out, seed);
    if (*serve_cmd) return run_serve(port, data_root, host);
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

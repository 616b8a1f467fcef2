// prefmap: stage-by-stage driver for the preference mapping pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 missing upstream artifact.

#include <iostream>

#include "CLI11.hpp"
#include "prefmap/pipeline.hpp"
#include "prefmap/service.hpp"

namespace {

using namespace prefmap;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

pipeline::PipelineConfig load(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  auto cfg = pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

pipeline::RunOptions run_options(const Common& c, bool synthetic) {
  pipeline::RunOptions o;
  o.synthetic_rater = synthetic;
  if (!c.quiet) o.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference maps of cities from satellite and street-level imagery"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "INI configuration file")->required();
    sub->add_option("--seed", common.seed, "override [pipeline] seed");
    sub->add_option("--out", common.out, "override the output directory");
    sub->add_flag("-q,--quiet", common.quiet, "no progress lines on stderr");
  };

  std::string action;
  bool synthetic = false;
  for (const auto& name : pipeline::stage_names()) {
    if (name == "survey-serve") continue;
    auto* sub = app.add_subcommand(name, "run the '" + name + "' stage");
    add_common(sub);
    sub->callback([&action, name] { action = name; });
  }

  int port = 0;
  std::string host = "127.0.0.1";
  std::string static_dir;
  auto* serve = app.add_subcommand("survey-serve", "schedule the survey and serve the rating API");
  add_common(serve);
  serve->add_flag("--synthetic-rater", synthetic, "answer every pair with the synthetic rater and exit");
  serve->add_option("--port", port, "listen port (default from config, 8787)");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--static", static_dir, "directory with UI assets");
  serve->callback([&] { action = "survey-serve"; });

  auto* all = app.add_subcommand("run-all", "run every stage in order");
  add_common(all);
  all->add_flag("--synthetic-rater", synthetic, "use the synthetic rater for the survey");
  all->callback([&] { action = "run-all"; });

  auto* ver = app.add_subcommand("verify", "check fingerprints and hashes across the artifact tree");
  add_common(ver);
  ver->callback([&] { action = "verify"; });

  auto* plan = app.add_subcommand("plan", "print the counts implied by a configuration");
  add_common(plan);
  plan->callback([&] { action = "plan"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = load(common);
    const auto opts = run_options(common, synthetic);
    if (action == "run-all") {
      pipeline::run_all(cfg, opts);
    } else if (action == "verify") {
      const auto rep = pipeline::verify(cfg);
      for (const auto& p : rep.problems) std::cout << "MISMATCH " << p << '\n';
      std::cout << rep.checked << " items checked, " << rep.problems.size() << " problems\n";
      return rep.ok() ? 0 : 1;
    } else if (action == "plan") {
      const auto p = pipeline::plan_counts(cfg);
      std::cout << "cities " << p.cities << "\ncells_per_city " << p.cells_per_city << "\nsatellite " << p.sat_total
                << "\nstreet_level " << p.sv_total << "\nsom_cells " << p.som_cells << "\ntransferred "
                << p.transferred << "\npredicted " << p.predicted << '\n';
    } else if (action == "survey-serve") {
      pipeline::run_stage(cfg, action, opts);
      if (!synthetic) {
        service::ServiceOptions so;
        so.root = cfg.out;
        so.static_dir = static_dir.empty() ? cfg.static_dir : std::filesystem::path(static_dir);
        so.rater_id = cfg.rater_id;
        so.label_rule = cfg.label_rule;
        service::SurveyService svc(so);
        const int p = port ? port : cfg.port;
        std::cerr << "serving on http://" << host << ":" << p << '\n';
        svc.listen(host, p);
      }
    } else {
      pipeline::run_stage(cfg, action, opts);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

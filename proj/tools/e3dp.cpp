// e3dp: weakly supervised plant point-cloud segmentation and trait extraction.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data, I/O,
// parse, or divergence error. All diagnostics go to standard error.

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "e3dp/pipeline.hpp"
#include "e3dp/service.hpp"

#include <CLI11.hpp>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  // Shortcuts for the most common io.* keys.
  std::string inputs, checkpoint, weak_dir, pred, gt, truth, instances_dir;
  std::string seed;
};

e3dp::RunConfig resolve(const Options& o) {
  e3dp::RunConfig cfg = o.config.empty() ? e3dp::RunConfig() : e3dp::RunConfig::load(o.config);
  const std::pair<const char*, const std::string*> shortcuts[] = {
      {"io.inputs", &o.inputs},       {"io.checkpoint", &o.checkpoint}, {"io.weak_dir", &o.weak_dir},
      {"io.pred", &o.pred},           {"io.gt", &o.gt},                 {"io.truth", &o.truth},
      {"io.instances_dir", &o.instances_dir}, {"seed", &o.seed}};
  for (const auto& [key, value] : shortcuts)
    if (!value->empty()) cfg.set(key, *value);
  for (const auto& s : o.sets) cfg.apply(s);
  return cfg;
}

httplib::Server* g_server = nullptr;

int serve(e3dp::RunConfig cfg, const std::string& out) {
  if (!out.empty()) e3dp::pipeline::freeze(cfg, "serve", out);
  if (cfg.str("serve.data_dir").empty()) throw e3dp::ConfigError("serve.data_dir is required");
  const auto budget = cfg.integer("serve.budget");
  const auto port = cfg.integer("serve.port");
  if (budget < 1) throw e3dp::ConfigError("serve.budget must be >= 1");
  if (port < 0 || port > 65535) throw e3dp::ConfigError("serve.port out of range");
  e3dp::service::AnnotationService svc(
      {cfg.str("serve.data_dir"), cfg.str("serve.session_dir"), static_cast<std::size_t>(budget)});
  httplib::Server srv;
  svc.bind(srv);
  g_server = &srv;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  const auto& host = cfg.str("serve.host");
  int bound = static_cast<int>(port);
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
    if (bound < 0) throw e3dp::IoError("cannot bind " + host);
  } else if (!srv.bind_to_port(host, bound)) {
    throw e3dp::IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  std::cerr << "serving " << cfg.str("serve.data_dir") << " on http://" << host << ":" << bound << '\n';
  srv.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised plant point-cloud segmentation and organ trait extraction"};
  app.require_subcommand(1);
  Options opt;
  const std::pair<const char*, const char*> descriptions[] = {
      {"synth", "generate labeled synthetic plants, ground-truth traits, and a manifest"},
      {"weaklabel", "draw k weak labels per labeled cloud"},
      {"pretrain", "self-supervised backbone pretraining"},
      {"finetune-sem", "fine-tune a semantic head on weak labels"},
      {"finetune-inst", "fine-tune semantic and offset heads on weak labels"},
      {"infer", "label clouds with a fine-tuned checkpoint"},
      {"evaluate", "semantic and instance metrics of predictions against ground truth"},
      {"traits", "stem diameter, leaf length and width from labeled clouds"},
      {"describe-checkpoint", "print a checkpoint summary"},
      {"serve", "HTTP annotation service"}};
  for (const auto& [name, desc] : descriptions) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", opt.config, "key = value config file (a frozen run.cfg replays a run)");
    sub->add_option("-s,--set", opt.sets, "override, key=value (repeatable)");
    sub->add_option("-o,--out", opt.out, "output directory");
    sub->add_option("-i,--inputs", opt.inputs, "io.inputs");
    sub->add_option("--checkpoint", opt.checkpoint, "io.checkpoint");
    sub->add_option("--weak-dir", opt.weak_dir, "io.weak_dir");
    sub->add_option("--pred", opt.pred, "io.pred");
    sub->add_option("--gt", opt.gt, "io.gt");
    sub->add_option("--truth", opt.truth, "io.truth");
    sub->add_option("--instances-dir", opt.instances_dir, "io.instances_dir");
    sub->add_option("--seed", opt.seed, "seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = resolve(opt);
    if (command == "serve") return serve(std::move(cfg), opt.out);
    std::cout << e3dp::pipeline::run(std::move(cfg), command, opt.out);
    return 0;
  } catch (const e3dp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const e3dp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

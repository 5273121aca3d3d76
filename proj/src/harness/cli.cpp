#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "mvaal/harness/harness.hpp"

namespace mvaal::harness {

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override a config key, e.g. --set schedule.b=20")->take_all();
  }
  ExperimentConfig load(bool check_schedule = true) const {
    return load_config(file.empty() ? std::nullopt : std::optional<std::filesystem::path>(file), sets,
                       check_schedule);
  }
};

int serve(const ExperimentConfig& base, const std::string& host, int port, const std::string& static_dir,
          bool exit_when_done, bool no_run, bool force) {
  ExperimentConfig c = base;
  if (c.oracle.kind != "remote") {
    std::cerr << "serve: using the remote oracle (oracle.kind=remote)\n";
    c.oracle.kind = "remote";
    if (c.task.kind == task::TaskKind::kSegmentation)
      throw ConfigError("serve: segmentation rounds need the simulated oracle");
  }
  std::filesystem::create_directories(c.output);
  auto queue = std::make_shared<al::TaskQueue>(c.output / "queue.json");
  auto ds = std::make_shared<const synth::Dataset>(obtain_dataset(c));
  ApiServer server(queue, ds, static_dir);
  const int bound = server.start(host, port);
  std::cout << "listening on http://" << host << ':' << bound << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  std::atomic<bool> done{no_run};
  std::atomic<int> code{0};
  std::thread worker;
  if (!no_run) {
    worker = std::thread([&] {
      try {
        RunFlags flags;
        flags.queue = queue;
        flags.force = force;
        run_experiment(c, flags, &std::cout);
        server.set_finished(true);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        server.set_finished(true, e.what());
        code = 1;
      }
      done = true;
    });
  }
  while (!g_interrupted && !(exit_when_done && done))
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  if (worker.joinable()) {
    if (!done) {
      // the loop may be blocked on the oracle; the queue keeps its progress
      std::cerr << "interrupted; rerun serve to resume\n";
      worker.detach();
      std::_Exit(130);
    }
    worker.join();
  }
  return code;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Active learning with a two-modality adversarial VAE sampler"};
  app.require_subcommand(1);

  ConfigArgs gen_args, run_args, abl_args, serve_args, show_args;
  std::string data_out;
  bool force = false, abl_force = false, serve_force = false, exit_when_done = false, no_run = false;
  std::string report_dir, host = "127.0.0.1", static_dir;
  int port = 8080;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and save it");
  gen_args.attach(gen);
  gen->add_option("-o,--out", data_out, "output directory")->required();

  auto* run = app.add_subcommand("run", "compare the configured samplers");
  run_args.attach(run);
  run->add_flag("--force", force, "rerun even if a finished or conflicting run exists");

  auto* abl = app.add_subcommand("ablate-gamma3", "repeat the mvaal arm for each gamma3 in the sweep");
  abl_args.attach(abl);
  abl->add_flag("--force", abl_force, "rerun even if a finished or conflicting run exists");

  auto* rep = app.add_subcommand("report", "rebuild tables and plots from a run directory");
  rep->add_option("dir", report_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* srv = app.add_subcommand("serve", "run with the HTTP annotation oracle");
  serve_args.attach(srv);
  srv->add_option("--host", host, "bind address");
  srv->add_option("-p,--port", port, "port, 0 picks a free one");
  srv->add_option("--static", static_dir, "UI bundle served at /")->check(CLI::ExistingDirectory);
  srv->add_flag("--exit-when-done", exit_when_done, "stop serving once the experiment finishes");
  srv->add_flag("--no-run", no_run, "serve the existing queue without running the experiment");
  srv->add_flag("--force", serve_force, "rerun even if a finished or conflicting run exists");

  auto* show = app.add_subcommand("config", "print the resolved configuration");
  show_args.attach(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const auto c = gen_args.load(false);
      const auto ds = obtain_dataset(c);
      synth::save_dataset(ds, data_out);
      std::cout << "wrote " << ds.samples.size() << " samples to " << data_out << " (" << ds.content_hash << ")\n";
    } else if (*run) {
      RunFlags flags;
      flags.force = force;
      run_experiment(run_args.load(), flags, &std::cout);
    } else if (*abl) {
      RunFlags flags;
      flags.force = abl_force;
      flags.ablate_gamma3 = true;
      run_experiment(abl_args.load(), flags, &std::cout);
    } else if (*rep) {
      emit_reports(report_dir);
      std::cout << "reports written to " << report_dir << '\n';
    } else if (*srv) {
      return serve(serve_args.load(), host, port, static_dir, exit_when_done, no_run, serve_force);
    } else if (*show) {
      std::cout << to_json(show_args.load()).dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ResumeConflict& e) {
    std::cerr << "resume conflict: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mvaal::harness

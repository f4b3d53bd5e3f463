// agf train|bench|spectral|gradcheck --config <path> [--out <dir>] [--seed <u64>]
//
// Exit status: 0 every verdict passed or was skipped, 1 a verdict failed,
// 2 usage or configuration error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "agf/errors.hpp"
#include "agf/harness.hpp"

namespace {

void print_summary(const agf::harness::CommandOutput& out) {
  for (const auto& report : out.reports) {
    std::cout << report["command"].get<std::string>() << ": " << report["status"].get<std::string>() << '\n';
    for (const auto& v : report["verdicts"]) {
      std::cout << "  " << v["status"].get<std::string>() << "  " << v["name"].get<std::string>() << "  "
                << v["measured"].dump() << '\n';
      if (!v["note"].get<std::string>().empty()) std::cout << "    " << v["note"].get<std::string>() << '\n';
    }
  }
  for (const auto& f : out.files) std::cout << "wrote " << f.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive graph filter toolkit: training, gradient checks, spectral experiments, benchmarks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "agf_out";
  std::optional<std::uint64_t> seed;

  for (const char* name : {"train", "bench", "spectral", "gradcheck"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory for reports and CSV curves")->capture_default_str();
    sub->add_option("--seed", seed, "override the config seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return agf::harness::kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = agf::harness::load_config(config_path);
    const auto out = agf::harness::run_command(command, config, out_dir, seed);
    print_summary(out);
    return out.exit_code;
  } catch (const agf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return agf::harness::kExitUsage;
  } catch (const agf::DomainError& e) {
    std::cerr << "invalid setting: " << e.what() << '\n';
    return agf::harness::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return agf::harness::kExitFail;
  }
}

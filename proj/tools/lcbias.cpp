// lcbias: command-line front end.
//
//   lcbias <subcommand> --config run.json [--seed N] [--out PATH]
//          [--workers N] [--format csv|jsonl]

#include "lcbias/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using lcbias::Error;
using lcbias::ErrorKind;
namespace cli = lcbias::cli;

int fail(ErrorKind kind, const std::string& message) {
  std::cerr << cli::error_record(kind, message) << '\n';
  return cli::exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-reduced estimation of smooth functionals in log-concave location families"};
  std::string subcommand, config_path, format;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
  app.add_option("subcommand", subcommand, "fit | fisher | estimate | experiment | lowerbound | diagnose")
      ->required()
      ->check(CLI::IsMember({"fit", "fisher", "estimate", "experiment", "lowerbound", "diagnose"}));
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--seed", seed, "64-bit seed (overrides the config)");
  app.add_option("--out", out, "output path (default: stdout)");
  app.add_option("--workers", workers, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  app.add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::parse_error, e.what());
  }

  std::ifstream in(config_path);
  if (!in) return fail(ErrorKind::io_error, "cannot open '" + config_path + "'");
  std::ostringstream text;
  text << in.rdbuf();

  try {
    cli::Overrides o;
    o.seed = seed;
    o.out = out;
    o.workers = workers;
    if (!format.empty()) o.format = format == "csv" ? cli::OutputFormat::csv : cli::OutputFormat::jsonl;
    const cli::RunConfig config = cli::parse_config(text.str(), o);
    if (cli::to_string(config.subcommand) != subcommand)
      return fail(ErrorKind::validation_error, "subcommand '" + subcommand + "' does not match the config's '" +
                                                   std::string(cli::to_string(config.subcommand)) + "'");
    return cli::run(config, std::cout, std::cerr);
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  }
}

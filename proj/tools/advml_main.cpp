#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "advml/pipeline.hpp"

namespace fs = std::filesystem;
using namespace advml;

namespace {

enum Exit { kOk = 0, kValidation = 1, kThreshold = 2, kIo = 3 };

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig::defaults() : RunConfig::load(path); }

int run(CLI::App& app, int argc, char** argv) {
  std::string config_path;
  std::string out;

  auto* gen = app.add_subcommand("gen-data", "generate or ingest a dataset and split it by patient");
  gen->add_option("--config", config_path, "run configuration JSON");
  gen->add_option("--out", out, "output dataset directory")->required();

  std::string data_dir;
  std::string role_text = "victim";
  auto* trn = app.add_subcommand("train", "train the victim or surrogate classifier");
  trn->add_option("--config", config_path, "run configuration JSON");
  trn->add_option("--data", data_dir, "dataset directory written by gen-data")->required();
  trn->add_option("--role", role_text, "victim or surrogate")->check(CLI::IsMember({"victim", "surrogate"}));
  trn->add_option("--out", out, "output directory for model.amf and train_log.csv")->required();

  std::string victim, surrogate;
  auto* atk = app.add_subcommand("attack", "run every attack condition on the test split");
  atk->add_option("--config", config_path, "run configuration JSON");
  atk->add_option("--data", data_dir, "dataset directory written by gen-data")->required();
  atk->add_option("--victim", victim, "victim checkpoint")->required();
  atk->add_option("--surrogate", surrogate, "surrogate checkpoint")->required();
  atk->add_option("--out", out, "output directory for the condition directories")->required();

  std::string attacks_dir;
  auto* rep = app.add_subcommand("report", "score the victim on each condition directory");
  rep->add_option("--config", config_path, "run configuration JSON");
  rep->add_option("--victim", victim, "victim checkpoint")->required();
  rep->add_option("--attacks", attacks_dir, "directory written by attack")->required();
  rep->add_option("--out", out, "report directory (default: report.output_dir)");

  std::string registry, image_dir, mode_text, source = "capture", timestamp;
  auto* prov = app.add_subcommand("provenance", "register or verify image hashes");
  prov->add_option("--registry", registry, "registry CSV")->required();
  prov->add_option("--dir", image_dir, "directory of .pgm/.ppm files")->required();
  prov->add_option("--mode", mode_text, "register or verify")->required()->check(CLI::IsMember({"register", "verify"}));
  prov->add_option("--source", source, "source tag stored on registration");
  prov->add_option("--timestamp", timestamp, "registration time to record (default: now, UTC)");

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (*gen) {
    const auto r = cmd_gen_data(load_config(config_path), out);
    std::cout << r.summary;
  } else if (*trn) {
    const auto r = cmd_train(load_config(config_path), data_dir, parse_role(role_text), out);
    for (std::size_t i = 0; i < r.epochs.size(); ++i) {
      std::printf("epoch %zu  loss %.4f  test accuracy %.3f\n", r.epochs[i].epoch, r.epochs[i].mean_loss,
                  r.test_accuracy[i]);
    }
    std::cout << "wrote " << r.checkpoint.string() << "\n";
  } else if (*atk) {
    cmd_attack(load_config(config_path), data_dir, victim, surrogate, out);
    std::cout << "wrote conditions to " << out << "\n";
  } else if (*rep) {
    const RunConfig config = load_config(config_path);
    const auto r = cmd_report(config, victim, attacks_dir, out.empty() ? fs::path(config.report.output_dir) : fs::path(out));
    std::cout << r.table;
    if (!r.failures.empty()) return kThreshold;
  } else if (*prov) {
    const auto mode = mode_text == "register" ? ProvenanceMode::register_images : ProvenanceMode::verify_images;
    std::cout << cmd_provenance(registry, image_dir, mode, source, timestamp).listing;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale adversarial attack pipeline"};
  try {
    return run(app, argc, argv);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  }
}

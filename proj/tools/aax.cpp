// aax: command-line front end.
//
//   aax synth        --out DIR [--n-train --n-val --n-test --size --seed]
//   aax ingest       --root PATH --format {folder|manifest} --out FILE
//   aax train        --model {a|b|c} --run-dir DIR --train FILE --val FILE
//   aax annotate     --run-dir DIR --manifest FILE
//   aax evaluate     --run-dir DIR --manifest FILE [--reviewed FILE]
//   aax review-serve --run-dir DIR [--port --token]
//   aax review-export --run-dir DIR [--out FILE]
//
// `--config FILE` reads a TOML document; [section] names match subcommands
// and keys match the long flag names. Command-line flags win.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"

#include "aax/aax.hpp"
#include "aax/review_server.hpp"

namespace {

using namespace aax;

void add_pipeline_flags(CLI::App* cmd, PipelineConfig& c, std::string& intersection) {
  cmd->add_option("--seed", c.seed, "pipeline seed")->capture_default_str();
  cmd->add_option("--theta", c.theta, "uncertainty threshold")->capture_default_str();
  cmd->add_option("--tau", c.tau, "saliency binarization threshold")->capture_default_str();
  cmd->add_option("--k-passes", c.k_passes, "MC Dropout passes per model")->capture_default_str();
  cmd->add_option("--intersection", intersection, "mask intersection: and | min")
      ->check(CLI::IsMember({"and", "min"}))
      ->capture_default_str();
  cmd->add_flag("--audit", c.audit, "write per-pass probabilities to audit.jsonl");
}

void print_train_report(const std::string& id, const TrainReport& r) {
  std::printf("model %s: %d epochs, best epoch %d, val loss %.6f, val accuracy %.4f%s\n",
              id.c_str(), r.epochs_run, r.best_epoch, r.val_loss.at(r.best_epoch - 1),
              r.val_accuracy.at(r.best_epoch - 1), r.stopped_early ? " (stopped early)" : "");
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly supervised annotation with an uncertainty-aware CNN ensemble"};
  app.set_config("--config", "", "TOML configuration file");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic blob dataset");
  std::string synth_out;
  int n_train = 200, n_test = 50, size = 64;
  std::uint64_t synth_seed = 0;
  SynthOptions synth_opt;
  synth_opt.n_val = 50;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n-train", n_train)->capture_default_str();
  synth->add_option("--n-val", synth_opt.n_val)->capture_default_str();
  synth->add_option("--n-test", n_test)->capture_default_str();
  synth->add_option("--size", size, "image side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--blob-radius", synth_opt.blob_radius)->capture_default_str();

  // ingest
  auto* ing = app.add_subcommand("ingest", "validate a dataset and write a JSONL manifest");
  std::string ing_root, ing_format = "folder", ing_out, ing_split = "train";
  ing->add_option("--root", ing_root, "dataset directory or manifest file")->required();
  ing->add_option("--format", ing_format, "folder | manifest")
      ->check(CLI::IsMember({"folder", "folder-per-class", "manifest", "manifest-file"}))
      ->capture_default_str();
  ing->add_option("--split", ing_split)->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  ing->add_option("--out", ing_out, "manifest file to write")->required();

  // train
  auto* train = app.add_subcommand("train", "train one ensemble member");
  std::string model_id, run_dir, train_file, val_file;
  ModelOptions mopt;
  TrainConfig tcfg;
  std::uint64_t train_seed = 0;
  train->add_option("--model", model_id, "ensemble member")
      ->check(CLI::IsMember({"a", "b", "c"}))
      ->required();
  train->add_option("--run-dir", run_dir)->required();
  train->add_option("--train", train_file, "training manifest")->required();
  train->add_option("--val", val_file, "validation manifest")->required();
  train->add_option("--seed", train_seed)->capture_default_str();
  train->add_option("--input-size", mopt.input_size)->capture_default_str();
  train->add_option("--in-channels", mopt.in_channels)->capture_default_str();
  train->add_option("--width", mopt.width, "base channel count")->capture_default_str();
  train->add_option("--dropout-rate", mopt.dropout_rate)->capture_default_str();
  train->add_option("--target-layer", mopt.target_layer, "saliency layer (default: last block)");
  train->add_option("--learning-rate", tcfg.learning_rate)->capture_default_str();
  train->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
  train->add_option("--max-epochs", tcfg.max_epochs)->capture_default_str();
  train->add_option("--patience", tcfg.patience)->capture_default_str();
  train->add_option("--lambda", tcfg.lambda, "variance penalty weight")->capture_default_str();
  train->add_option("--k-train-passes", tcfg.k_train_passes)->capture_default_str();
  train->add_flag("--class-weighting", tcfg.class_weighting, "inverse-frequency class weights");

  // annotate
  auto* ann = app.add_subcommand("annotate", "run the ensemble over a manifest");
  std::string ann_manifest, intersection = "and";
  PipelineConfig pcfg;
  ann->add_option("--run-dir", run_dir)->required();
  ann->add_option("--manifest", ann_manifest)->required();
  add_pipeline_flags(ann, pcfg, intersection);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score decisions against ground truth");
  std::string ev_manifest, ev_reviewed;
  ev->add_option("--run-dir", run_dir)->required();
  ev->add_option("--manifest", ev_manifest, "ground-truth manifest")->required();
  ev->add_option("--reviewed", ev_reviewed, "review export applied to Flagged decisions");

  // review-serve
  auto* srv = app.add_subcommand("review-serve", "serve the review queue over HTTP");
  std::string host = "127.0.0.1", token;
  int port = 8080;
  srv->add_option("--run-dir", run_dir)->required();
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port)->capture_default_str();
  srv->add_option("--token", token, "shared bearer token (empty disables auth)")
      ->envname("AAX_REVIEW_TOKEN");

  // review-export
  auto* exp = app.add_subcommand("review-export", "write resolved verdicts as JSONL labels");
  std::string exp_out;
  exp->add_option("--run-dir", run_dir)->required();
  exp->add_option("--out", exp_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto sets = synth_dataset(n_train, n_test, size, synth_seed, synth_out, synth_opt);
      std::printf("wrote %zu train, %zu val, %zu test images under %s\n",
                  sets.train.records.size(), sets.val.records.size(), sets.test.records.size(),
                  synth_out.c_str());
    } else if (*ing) {
      auto m = ingest(ing_root, parse_ingest_format(ing_format), parse_split(ing_split));
      write_manifest(m, ing_out);
      for (const auto& s : m.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
      std::printf("%zu records, %zu skipped\n", m.records.size(), m.warning_count());
    } else if (*train) {
      const auto tr = read_manifest(train_file);
      const auto va = read_manifest(val_file);
      const auto report = train_member(run_dir, model_id, mopt, tr, va, tcfg, train_seed);
      print_train_report(model_id, report);
    } else if (*ann) {
      pcfg.intersection = parse_intersection(intersection);
      const auto m = read_manifest(ann_manifest);
      const auto result = annotate(run_dir, m, pcfg);
      std::size_t counts[3] = {0, 0, 0};
      for (const auto& d : result.decisions) ++counts[static_cast<int>(d.verdict)];
      std::printf("%zu images: %zu Healthy, %zu Diseased, %zu Flagged (%zu queued), %zu failed\n",
                  result.decisions.size() + result.failures.size(), counts[0], counts[1],
                  counts[2], result.enqueued, result.failures.size());
      for (const auto& f : result.failures) {
        std::fprintf(stderr, "error: %s: %s\n", f.id.c_str(), f.error.c_str());
      }
    } else if (*ev) {
      const auto truth = read_manifest(ev_manifest, false);
      auto decisions = read_decisions(fs::path(run_dir) / "decisions.jsonl", run_dir);
      if (!ev_reviewed.empty()) {
        const auto n = apply_review_labels(decisions, read_jsonl(ev_reviewed));
        std::printf("applied %zu review labels\n", n);
      }
      const auto report = evaluate_dataset(decisions, truth);
      write_eval_report(run_dir, report);
      std::printf("%s\n", to_json(report).dump(2).c_str());
    } else if (*srv) {
      ReviewStore store(fs::path(run_dir) / "review-spool");
      httplib::Server server;
      mount_review_api(server, store, token);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::printf("serving %zu review items on http://%s:%d\n", store.size(), host.c_str(), port);
      std::fflush(stdout);
      if (!server.listen(host, port)) {
        std::fprintf(stderr, "error: cannot listen on %s:%d\n", host.c_str(), port);
        return 1;
      }
    } else if (*exp) {
      ReviewStore store(fs::path(run_dir) / "review-spool");
      std::string text;
      for (const auto& rec : store.export_labels()) text += rec.dump() + "\n";
      if (exp_out.empty()) {
        std::cout << text;
      } else {
        write_text(exp_out, text);
        std::fprintf(stderr, "wrote %zu labels to %s\n", store.export_labels().size(),
                     exp_out.c_str());
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const IngestError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training error at epoch %d: %s\n", e.epoch(), e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

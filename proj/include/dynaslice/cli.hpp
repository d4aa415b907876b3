#pragma once

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dynaslice/container.hpp"
#include "dynaslice/corpus.hpp"
#include "dynaslice/eval.hpp"
#include "dynaslice/io.hpp"
#include "dynaslice/profile.hpp"
#include "dynaslice/schedule.hpp"
#include "dynaslice/slicer.hpp"
#include "dynaslice/train.hpp"
#include "dynaslice/version.hpp"

namespace dynaslice::cli {

// Exit codes, one per error category; also listed in --help.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kPrecondition = 3,
  kFormat = 4,
  kSchedule = 5,
  kNumerical = 6,
  kTraining = 7,
  kTask = 8,
  kIo = 9,
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct InputRef {
  std::string label;
  std::string path;
};

// {tool_version, seed, input digests}; every written artifact carries one.
inline nlohmann::json provenance(const std::vector<InputRef>& inputs,
                                 const nlohmann::json& seed = nullptr) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["seed"] = seed;
  nlohmann::json in = nlohmann::json::object();
  for (const InputRef& ref : inputs)
    in[ref.label] = {{"path", ref.path}, {"digest", file_digest(ref.path)}};
  j["inputs"] = in;
  return j;
}

inline void write_json_artifact(const std::string& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

using AnyModel = std::variant<TransformerModel, SlicedModel>;

inline AnyModel load_any_model(const std::string& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw format_error("manifest " + manifest_path + ": " + e.what());
  }
  const std::string kind = manifest.value("kind", "dense");
  if (kind == "sliced") return load_sliced_model(manifest_path);
  return load_model(manifest_path);
}

inline nlohmann::json sweep_row_json(const SweepRow& row) {
  nlohmann::json j = {{"s_p", row.s_p},
                      {"s_b", row.s_b},
                      {"seed", row.seed},
                      {"failed", row.failed},
                      {"perplexity", row.ppl},
                      {"accuracy", row.acc},
                      {"realized_pruned_fraction", row.realized_pruned_fraction},
                      {"realized_mean_slice", row.realized_mean_slice}};
  if (row.failed) j["error"] = row.error_message;
  return j;
}

inline std::string sweep_csv(const SweepReport& report,
                             const std::vector<std::string>& corpus_ids,
                             const std::vector<std::string>& task_ids) {
  std::string csv;
  csv += "# dynaslice sweep report; one row per (s_p, s_b, seed) grid point\n";
  csv += "# columns: s_p, s_b, seed, failed, then ppl_<corpus> per corpus, "
         "acc_<task> per task, realized_pruned_fraction, realized_mean_slice\n";
  csv += "s_p,s_b,seed,failed";
  for (const auto& id : corpus_ids) csv += ",ppl_" + id;
  for (const auto& id : task_ids) csv += ",acc_" + id;
  csv += ",realized_pruned_fraction,realized_mean_slice\n";
  for (const SweepRow& row : report.rows) {
    csv += fmt_double(row.s_p) + "," + fmt_double(row.s_b) + "," +
           std::to_string(row.seed) + "," + (row.failed ? "1" : "0");
    for (const auto& id : corpus_ids)
      csv += "," + (row.failed ? std::string() : fmt_double(row.ppl.at(id)));
    for (const auto& id : task_ids)
      csv += "," + (row.failed ? std::string() : fmt_double(row.acc.at(id)));
    csv += "," + (row.failed ? std::string() : fmt_double(row.realized_pruned_fraction));
    csv += "," + (row.failed ? std::string() : fmt_double(row.realized_mean_slice));
    csv += "\n";
  }
  return csv;
}

inline std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t next = csv.find(',', pos);
    if (next == std::string::npos) next = csv.size();
    grid.push_back(std::stod(csv.substr(pos, next - pos)));
    pos = next + 1;
  }
  return grid;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t next = csv.find(',', pos);
    if (next == std::string::npos) next = csv.size();
    seeds.push_back(std::stoull(csv.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (seeds.empty()) seeds.push_back(0);
  return seeds;
}

}  // namespace detail

// Parses argv (without the program name) and runs one subcommand.
// Artifacts land on disk; diagnostics go to stderr as "category: message".
inline int run_command(const std::vector<std::string>& args) {
  CLI::App app{"dynaslice: layer-redundancy-guided PCA slicing for toy "
               "transformer checkpoints"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read long-option defaults from a TOML file");
  app.footer(
      "Exit codes: 0 ok, 2 usage, 3 precondition, 4 format, 5 infeasible "
      "schedule,\n 6 numerical, 7 training, 8 task, 9 io, 1 internal.\n"
      "Errors print to stderr as 'category: message', one line.");

  // train-toy ---------------------------------------------------------------
  auto* cmd_train = app.add_subcommand(
      "train-toy", "Train a small byte-level checkpoint on a UTF-8 corpus");
  std::string tr_corpus, tr_out;
  TrainParams tr_params;
  ModelConfig tr_cfg;
  cmd_train->add_option("--corpus", tr_corpus, "Training corpus (raw UTF-8 text)")
      ->required()->check(CLI::ExistingFile);
  cmd_train->add_option("--out,-o", tr_out,
                        "Output container base path (writes <base>.json/.bin)")
      ->required();
  cmd_train->add_option("--steps", tr_params.steps, "Adam steps");
  cmd_train->add_option("--seed", tr_params.seed, "Init/sampling seed");
  cmd_train->add_option("--lr", tr_params.learning_rate, "Learning rate");
  cmd_train->add_option("--batch", tr_params.batch_size, "Sequences per step");
  cmd_train->add_option("--seq-len", tr_params.seq_len, "Window length per sequence");
  cmd_train->add_option("--layers", tr_cfg.n_layers, "Decoder blocks");
  cmd_train->add_option("--d-model", tr_cfg.d_model, "Residual width");
  cmd_train->add_option("--heads", tr_cfg.n_heads, "Attention heads");
  cmd_train->add_option("--d-ff", tr_cfg.d_ff, "MLP hidden width");
  cmd_train->add_option("--max-seq", tr_cfg.max_seq, "Maximum sequence length");

  // profile -----------------------------------------------------------------
  auto* cmd_profile = app.add_subcommand(
      "profile", "Score per-layer redundancy (input/output cosine) on a corpus");
  std::string pf_model, pf_corpus, pf_out;
  std::size_t pf_batch = 0;
  cmd_profile->add_option("--model", pf_model, "Dense model manifest (.json)")
      ->required()->check(CLI::ExistingFile);
  cmd_profile->add_option("--corpus", pf_corpus, "Calibration corpus (UTF-8 text)")
      ->required()->check(CLI::ExistingFile);
  cmd_profile->add_option("--out,-o", pf_out, "Output profile JSON")->required();
  cmd_profile->add_option("--batch-tokens", pf_batch,
                          "Tokens per traced window (default max_seq)");

  // schedule ----------------------------------------------------------------
  auto* cmd_schedule = app.add_subcommand(
      "schedule", "Turn a redundancy profile into per-layer slice fractions");
  std::string sc_profile, sc_out;
  double sc_sp = 0.0, sc_sb = 0.0, sc_fs_max = kDefaultFsMax;
  cmd_schedule->add_option("--lr", sc_profile, "Profile JSON from `profile`")
      ->required()->check(CLI::ExistingFile);
  cmd_schedule->add_option("--sp", sc_sp, "Target average slice fraction S_P")
      ->required();
  cmd_schedule->add_option("--sb", sc_sb, "Per-layer slice floor S_B")->required();
  cmd_schedule->add_option("--fs-max", sc_fs_max, "Per-layer slice ceiling");
  cmd_schedule->add_option("--out,-o", sc_out, "Output schedule JSON")->required();

  // slice -------------------------------------------------------------------
  auto* cmd_slice = app.add_subcommand(
      "slice", "Apply PCA rotation + per-layer deletion to a dense model");
  std::string sl_model, sl_schedule, sl_profile, sl_corpus, sl_out;
  double sl_sp = -1.0, sl_sb = -1.0, sl_fs_max = kDefaultFsMax;
  cmd_slice->add_option("--model", sl_model, "Dense model manifest (.json)")
      ->required()->check(CLI::ExistingFile);
  cmd_slice->add_option("--schedule", sl_schedule, "Schedule JSON from `schedule`")
      ->check(CLI::ExistingFile);
  cmd_slice->add_option("--profile", sl_profile,
                        "Profile JSON (with --sp to build the schedule inline)")
      ->check(CLI::ExistingFile);
  cmd_slice->add_option("--sp", sl_sp, "Inline schedule: S_P (needs --profile)");
  cmd_slice->add_option("--sb", sl_sb, "Inline schedule: S_B (default: S_P)");
  cmd_slice->add_option("--fs-max", sl_fs_max, "Inline schedule: slice ceiling");
  cmd_slice->add_option("--corpus", sl_corpus,
                        "Calibration corpus for the rotation Grams")
      ->required()->check(CLI::ExistingFile);
  cmd_slice->add_option("--out,-o", sl_out, "Output container base path")->required();

  // drop --------------------------------------------------------------------
  auto* cmd_drop = app.add_subcommand(
      "drop", "Whole-layer removal baseline: delete the most redundant blocks");
  std::string dr_model, dr_profile, dr_out, dr_report;
  std::size_t dr_count = 0;
  cmd_drop->add_option("--model", dr_model, "Dense model manifest (.json)")
      ->required()->check(CLI::ExistingFile);
  cmd_drop->add_option("--profile", dr_profile, "Profile JSON from `profile`")
      ->required()->check(CLI::ExistingFile);
  cmd_drop->add_option("--count", dr_count, "Number of blocks to remove")
      ->required();
  cmd_drop->add_option("--out,-o", dr_out, "Output container base path")->required();
  cmd_drop->add_option("--report", dr_report, "Optional drop report JSON");

  // eval --------------------------------------------------------------------
  auto* cmd_eval = app.add_subcommand(
      "eval", "Perplexity / choice accuracy of a dense or sliced container");
  std::string ev_model, ev_out;
  std::vector<std::string> ev_corpora, ev_tasks;
  cmd_eval->add_option("--model", ev_model, "Model manifest (.json), dense or sliced")
      ->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("--corpus", ev_corpora,
                       "Perplexity corpus (repeatable; id = file stem)")
      ->check(CLI::ExistingFile);
  cmd_eval->add_option("--task", ev_tasks,
                       "Choice-task JSONL fixture (repeatable; id = file stem)")
      ->check(CLI::ExistingFile);
  cmd_eval->add_option("--out,-o", ev_out, "Output metrics JSON")->required();

  // sweep -------------------------------------------------------------------
  auto* cmd_sweep = app.add_subcommand(
      "sweep", "Slice at every S_B on a grid, evaluate, select by calibration");
  std::string sw_model, sw_profile, sw_rotation_corpus, sw_calibration;
  std::vector<std::string> sw_corpora, sw_tasks;
  std::string sw_grid_csv, sw_seeds_csv = "0";
  double sw_sp = 0.0, sw_step = 0.02, sw_fs_max = kDefaultFsMax;
  unsigned sw_jobs = 1;
  std::string sw_out_csv, sw_out_json;
  cmd_sweep->add_option("--model", sw_model, "Dense model manifest (.json)")
      ->required()->check(CLI::ExistingFile);
  cmd_sweep->add_option("--profile", sw_profile, "Profile JSON from `profile`")
      ->required()->check(CLI::ExistingFile);
  cmd_sweep->add_option("--sp", sw_sp, "Target average slice fraction S_P")
      ->required();
  cmd_sweep->add_option("--sb-step", sw_step, "Grid step for S_B (default 0.02)");
  cmd_sweep->add_option("--sb-grid", sw_grid_csv,
                        "Explicit comma-separated S_B grid (overrides --sb-step)");
  cmd_sweep->add_option("--rotation-corpus", sw_rotation_corpus,
                        "Corpus for rotation Grams (default: --profile corpus "
                        "cannot be recovered, so pass the LR calibration corpus)")
      ->required()->check(CLI::ExistingFile);
  cmd_sweep->add_option("--corpus", sw_corpora,
                        "Perplexity corpus (repeatable; id = file stem)")
      ->required()->check(CLI::ExistingFile);
  cmd_sweep->add_option("--task", sw_tasks,
                        "Choice-task JSONL fixture (repeatable; id = file stem)")
      ->check(CLI::ExistingFile);
  cmd_sweep->add_option("--calibration", sw_calibration,
                        "Corpus id used for S_B selection (default: first --corpus)");
  cmd_sweep->add_option("--seeds", sw_seeds_csv, "Comma-separated seeds (default 0)");
  cmd_sweep->add_option("--fs-max", sw_fs_max, "Per-layer slice ceiling");
  cmd_sweep->add_option("--jobs", sw_jobs, "Worker threads (results identical)");
  cmd_sweep->add_option("--out-csv", sw_out_csv, "Output CSV report")->required();
  cmd_sweep->add_option("--out-json", sw_out_json, "Output JSON report")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (cmd_train->parsed()) {
      tr_cfg.validate();
      const std::vector<int> corpus = load_corpus(tr_corpus);
      TransformerModel model = init_model(tr_cfg, tr_params.seed);
      const TrainStats stats = train_toy(model, corpus, tr_params);
      save_model(model, tr_out,
                 detail::provenance({{"corpus", tr_corpus}}, tr_params.seed));
      std::cout << "train-toy: steps=" << tr_params.steps
                << " initial_loss=" << detail::fmt_double(stats.initial_loss)
                << " final_loss=" << detail::fmt_double(stats.final_loss)
                << " out=" << tr_out << ".json\n";
    } else if (cmd_profile->parsed()) {
      const TransformerModel model = load_model(pf_model);
      const std::vector<int> corpus = load_corpus(pf_corpus);
      LayerProfile profile = profile_lr(model, corpus, pf_batch);
      profile.calibration_corpus_id = path_stem(pf_corpus);
      profile.model_id = path_stem(pf_model);
      nlohmann::json j = profile_to_json(profile);
      j["provenance"] =
          detail::provenance({{"model", pf_model}, {"corpus", pf_corpus}});
      detail::write_json_artifact(pf_out, j);
      std::cout << "profile: layers=" << profile.raw_lr.size()
                << " tokens=" << profile.tokens_seen
                << " degenerate=" << (profile.degenerate ? "yes" : "no")
                << " out=" << pf_out << "\n";
    } else if (cmd_schedule->parsed()) {
      const LayerProfile profile =
          profile_from_json(nlohmann::json::parse(read_file(sc_profile)));
      const SliceSchedule sched =
          build_schedule(profile.normalized_lr, sc_sp, sc_sb, profile.d_model,
                         sc_fs_max, path_stem(sc_profile));
      nlohmann::json j = schedule_to_json(sched);
      j["provenance"] = detail::provenance({{"profile", sc_profile}});
      detail::write_json_artifact(sc_out, j);
      double mean_fs = 0.0;
      for (double v : sched.fs) mean_fs += v;
      mean_fs /= static_cast<double>(sched.fs.size());
      std::cout << "schedule: s_p=" << detail::fmt_double(sc_sp)
                << " s_b=" << detail::fmt_double(sc_sb)
                << " mean_fs=" << detail::fmt_double(mean_fs)
                << " realized_mean_slice="
                << detail::fmt_double(sched.realized_mean_slice)
                << " out=" << sc_out << "\n";
    } else if (cmd_slice->parsed()) {
      const TransformerModel model = load_model(sl_model);
      SliceSchedule sched;
      std::vector<detail::InputRef> inputs = {{"model", sl_model},
                                              {"corpus", sl_corpus}};
      if (!sl_schedule.empty()) {
        sched = schedule_from_json(nlohmann::json::parse(read_file(sl_schedule)));
        inputs.push_back({"schedule", sl_schedule});
      } else {
        if (sl_profile.empty() || sl_sp < 0.0)
          throw precondition_error(
              "slice: pass --schedule, or --profile with --sp");
        const LayerProfile profile =
            profile_from_json(nlohmann::json::parse(read_file(sl_profile)));
        const double sb = sl_sb < 0.0 ? sl_sp : sl_sb;
        sched = build_schedule(profile.normalized_lr, sl_sp, sb, profile.d_model,
                               sl_fs_max, path_stem(sl_profile));
        inputs.push_back({"profile", sl_profile});
      }
      const TransformerModel absorbed = absorb_norm_scales(model);
      const std::vector<int> corpus = load_corpus(sl_corpus);
      const CovarianceStats stats = collect_covariances(absorbed, corpus);
      const SlicedModel sliced =
          slice_model(absorbed, sched, compute_rotations(stats));
      nlohmann::json prov = detail::provenance(inputs);
      prov["schedule"] = schedule_to_json(sched);
      save_model(sliced, sl_out, prov);
      const std::size_t src = count_parameters(model).total;
      const std::size_t dst = count_parameters(sliced).total;
      std::cout << "slice: params " << src << " -> " << dst
                << " pruned_fraction=" << detail::fmt_double(pruned_fraction(src, dst))
                << " out=" << sl_out << ".json\n";
    } else if (cmd_drop->parsed()) {
      const TransformerModel model = load_model(dr_model);
      const LayerProfile profile =
          profile_from_json(nlohmann::json::parse(read_file(dr_profile)));
      DropReport report;
      const TransformerModel pruned =
          drop_layers_baseline(model, profile, dr_count, &report);
      save_model(pruned, dr_out,
                 detail::provenance({{"model", dr_model}, {"profile", dr_profile}}));
      if (!dr_report.empty()) {
        nlohmann::json j = {
            {"dropped_layers", report.dropped_layers},
            {"block_param_pruned_fraction", report.block_param_pruned_fraction},
            {"total_param_pruned_fraction", report.total_param_pruned_fraction}};
        j["provenance"] =
            detail::provenance({{"model", dr_model}, {"profile", dr_profile}});
        detail::write_json_artifact(dr_report, j);
      }
      std::cout << "drop: removed=" << dr_count << "/" << model.config.n_layers
                << " block_param_pruned_fraction="
                << detail::fmt_double(report.block_param_pruned_fraction)
                << " out=" << dr_out << ".json\n";
    } else if (cmd_eval->parsed()) {
      const detail::AnyModel model = detail::load_any_model(ev_model);
      nlohmann::json ppl = nlohmann::json::object();
      nlohmann::json acc = nlohmann::json::object();
      std::vector<detail::InputRef> inputs = {{"model", ev_model}};
      for (const std::string& path : ev_corpora) {
        const std::vector<int> tokens = load_corpus(path);
        const double v = std::visit(
            [&](const auto& m) { return perplexity(m, tokens); }, model);
        ppl[path_stem(path)] = v;
        inputs.push_back({"corpus_" + path_stem(path), path});
        std::cout << "eval: ppl_" << path_stem(path) << "="
                  << detail::fmt_double(v) << "\n";
      }
      for (const std::string& path : ev_tasks) {
        const EvalTask task = load_task(path);
        const ChoiceResult r = std::visit(
            [&](const auto& m) { return choice_accuracy(m, task); }, model);
        acc[task.id] = r.accuracy;
        inputs.push_back({"task_" + task.id, path});
        std::cout << "eval: acc_" << task.id << "=" << detail::fmt_double(r.accuracy)
                  << " ties=" << r.ties << "\n";
      }
      nlohmann::json j = {{"perplexity", ppl},
                          {"accuracy", acc},
                          {"window_policy", kWindowPolicy}};
      j["provenance"] = detail::provenance(inputs);
      detail::write_json_artifact(ev_out, j);
    } else if (cmd_sweep->parsed()) {
      const TransformerModel model = load_model(sw_model);
      const LayerProfile profile =
          profile_from_json(nlohmann::json::parse(read_file(sw_profile)));
      const std::vector<int> rotation_tokens = load_corpus(sw_rotation_corpus);
      std::vector<EvalCorpus> corpora;
      for (const std::string& path : sw_corpora)
        corpora.push_back({path_stem(path), load_corpus(path)});
      std::vector<EvalTask> tasks;
      for (const std::string& path : sw_tasks) tasks.push_back(load_task(path));
      const std::vector<double> grid = sw_grid_csv.empty()
                                           ? make_sb_grid(sw_sp, sw_step)
                                           : detail::parse_grid(sw_grid_csv);
      const std::vector<std::uint64_t> seeds = detail::parse_seeds(sw_seeds_csv);
      const std::string calibration_id =
          sw_calibration.empty() ? corpora.front().id : sw_calibration;

      const SweepReport report =
          sweep_sb(model, profile, rotation_tokens, sw_sp, grid, corpora, tasks,
                   seeds, sw_fs_max, sw_jobs);
      const Selection sel = select_sb_by_calibration(report, calibration_id);

      std::vector<std::string> corpus_ids, task_ids;
      for (const auto& c : corpora) corpus_ids.push_back(c.id);
      for (const auto& t : tasks) task_ids.push_back(t.id);
      write_file(sw_out_csv, detail::sweep_csv(report, corpus_ids, task_ids));

      nlohmann::json rows = nlohmann::json::array();
      for (const SweepRow& row : report.rows)
        rows.push_back(detail::sweep_row_json(row));
      nlohmann::json aggregates = nlohmann::json::object();
      for (const auto& [id, agg] : report.ppl_aggregates)
        aggregates["ppl_" + id] = {{"median", agg.median}, {"mean", agg.mean}};
      for (const auto& [id, agg] : report.acc_aggregates)
        aggregates["acc_" + id] = {{"median", agg.median}, {"mean", agg.mean}};
      std::vector<detail::InputRef> inputs = {
          {"model", sw_model},
          {"profile", sw_profile},
          {"rotation_corpus", sw_rotation_corpus}};
      for (const std::string& path : sw_corpora)
        inputs.push_back({"corpus_" + path_stem(path), path});
      for (const std::string& path : sw_tasks)
        inputs.push_back({"task_" + path_stem(path), path});
      nlohmann::json j = {
          {"s_p", sw_sp},
          {"s_b_grid", grid},
          {"calibration_corpus", calibration_id},
          {"window_policy", report.window_policy},
          {"rows", rows},
          {"aggregates", aggregates},
          {"selection",
           {{"s_b_star", sel.s_b_star},
            {"selected", detail::sweep_row_json(sel.selected)},
            {"constant_baseline", detail::sweep_row_json(sel.constant_baseline)}}}};
      j["provenance"] = detail::provenance(inputs, seeds);
      detail::write_json_artifact(sw_out_json, j);
      std::cout << "sweep: rows=" << report.rows.size()
                << " s_b_star=" << detail::fmt_double(sel.s_b_star)
                << " calibration=" << calibration_id << " out=" << sw_out_csv
                << "," << sw_out_json << "\n";
    }
  } catch (const precondition_error& e) {
    std::cerr << "precondition: " << e.what() << "\n";
    return kPrecondition;
  } catch (const format_error& e) {
    std::cerr << "format: " << e.what() << "\n";
    return kFormat;
  } catch (const schedule_error& e) {
    std::cerr << "schedule: " << e.what() << "\n";
    return kSchedule;
  } catch (const numerical_error& e) {
    std::cerr << "numerical: " << e.what() << "\n";
    return kNumerical;
  } catch (const training_error& e) {
    std::cerr << "training: " << e.what() << "\n";
    return kTraining;
  } catch (const task_error& e) {
    std::cerr << "task: " << e.what() << "\n";
    return kTask;
  } catch (const io_error& e) {
    std::cerr << "io: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "format: " << e.what() << "\n";
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "internal: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace dynaslice::cli

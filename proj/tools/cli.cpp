// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "canonpolicy/error.hpp"
#include "canonpolicy/harness.hpp"
#include "canonpolicy/pointcloud_io.hpp"

namespace cpol {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string mode;
  bool dump = false;
};

HarnessConfig effective_config(const Globals& g) {
  HarnessConfig c = g.config.empty() ? HarnessConfig{} : load_config(g.config);
  if (!g.mode.empty()) c.policy.vn.mode = rot_mode_from_string(g.mode);
  if (g.seed) {
    c.data.seed = c.train.seed = c.eval.seed = c.dispersion.seed = c.consistency.seed = *g.seed;
  }
  c.policy.validate();
  return c;
}

int report_checks(const std::vector<CheckResult>& rs, std::ostream& out) {
  bool ok = true;
  for (const auto& r : rs) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << " value=" << r.value << " tol=" << r.tolerance << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

std::vector<Demo> demos_of(const std::vector<EpisodeRecord>& eps) {
  std::vector<Demo> out;
  out.reserve(eps.size());
  for (const auto& e : eps) out.push_back(e.demo);
  return out;
}

int cmd_gen(const HarnessConfig& c, const std::string& out_dir, std::ostream& out) {
  const int tid = template_index(c.data.template_name);
  const SceneTemplate& tmpl = builtin_templates()[static_cast<std::size_t>(tid)];
  const PolicyConfig& p = c.policy;
  const auto seen = generate_dataset(tmpl, tid, c.data, c.data.count, p.obs_window, p.horizon, p.vn.mode, c.data.seed);
  const auto novel =
      generate_dataset(tmpl, tid, c.data, c.data.novel_count, p.obs_window, p.horizon, p.vn.mode, c.data.seed + 1);
  save_episodes(fs::path(out_dir) / "seen", seen);
  save_episodes(fs::path(out_dir) / "novel", novel);
  out << "wrote " << seen.size() << " seen and " << novel.size() << " novel episodes to " << out_dir << '\n';
  return 0;
}

int cmd_train(const HarnessConfig& c, const std::string& data, const std::string& ckpt, const std::string& metrics_path,
              std::ostream& out) {
  const auto eps = load_episodes(fs::path(data) / "seen");
  Policy p = Policy::init(c.policy, c.train.seed);
  std::ofstream metrics_file;
  std::ostream* metrics = nullptr;
  if (!metrics_path.empty()) {
    metrics_file.open(metrics_path);
    if (!metrics_file) throw Error(ErrorCode::kIo, "cannot write " + metrics_path);
    metrics = &metrics_file;
  }
  if (c.consistency.steps > 0 && c.policy.canonicalize && !c.train.freeze_phi) {
    const auto losses = train_consistency(p.vn, c.consistency, metrics);
    out << "consistency: " << losses.size() << " steps, final loss " << losses.back() << '\n';
  }
  const auto on_ckpt = [&](const Policy& q, int step) { save_checkpoint(ckpt + ".step" + std::to_string(step), q); };
  const TrainResult r = train(p, demos_of(eps), c.train, metrics, on_ckpt);
  save_checkpoint(ckpt, p);
  out << "trained " << r.steps << " steps";
  if (!r.losses.empty()) out << ", final loss " << r.losses.back();
  out << "; " << p.num_params() << " parameters, estimator share " << p.phi_share() << '\n';
  return 0;
}

int cmd_eval(const HarnessConfig& c, const std::string& data, const std::string& ckpt, bool oracle,
             const std::string& report_path, std::ostream& out) {
  const auto seen = load_episodes(fs::path(data) / "seen");
  const auto novel = load_episodes(fs::path(data) / "novel");
  std::optional<Policy> p;
  RotMode mode = c.policy.vn.mode;
  if (!oracle) {
    p = load_checkpoint(ckpt);
    mode = p->cfg.vn.mode;
    if (!seen.empty() && (static_cast<int>(seen.front().demo.obs.size()) != p->cfg.obs_window ||
                          static_cast<int>(seen.front().demo.poses.size()) != p->cfg.horizon)) {
      throw Error(ErrorCode::kShapeMismatch, "episodes do not match the checkpoint's window and horizon");
    }
  }
  const EvalReport r = evaluate(oracle ? oracle_policy() : policy_fn(*p), seen, novel, mode, c.eval);
  write_report(out, r);
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + report_path);
    write_report(f, r);
  }
  return 0;
}

int cmd_canon(const HarnessConfig& c, const std::string& ckpt, const std::string& in, const std::string& out_path,
              std::ostream& out) {
  const VNParams params = ckpt.empty() ? Policy::init(c.policy, c.train.seed).vn : load_checkpoint(ckpt).vn;
  const Canonicalization r = estimate_rotation(io::read_cloud(in), params);
  if (!out_path.empty()) io::write_cloud(out_path, r.x_cn, fs::path(out_path).extension() == ".pcf");
  const Mat3& R = r.frame.rot.matrix();
  out << std::setprecision(17);
  for (int i = 0; i < 3; ++i) {
    out << "T " << R(i, 0) << ' ' << R(i, 1) << ' ' << R(i, 2) << ' ' << r.frame.trans[i] << '\n';
  }
  out << "T 0 0 0 1\n";
  out << "degenerate " << (r.degenerate ? 1 : 0) << '\n';
  if (out_path.empty()) io::write_text(out, r.x_cn);
  return 0;
}

int cmd_dispersion(const HarnessConfig& c, const std::string& ckpt, bool frozen, const std::string& tmpl,
                   std::ostream& out) {
  VNParams params = Policy::init(c.policy, c.train.seed).vn;
  if (!ckpt.empty() && !frozen) params = load_checkpoint(ckpt).vn;
  const std::vector<int> levels{0, 1, 2, 3};
  const auto rows =
      feature_dispersion_study(params, template_index(tmpl.empty() ? c.data.template_name : tmpl), levels, c.dispersion);
  out << "level intra dispersion\n";
  for (const auto& r : rows) out << r.level << ' ' << r.intra << ' ' << r.dispersion << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"canonical point-cloud policy toolkit", "cpol"};
  app.fallthrough();
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--seed", g.seed, "override every seed in the config");
  app.add_option("--config", g.config, "config file (key = value with [sections])");
  app.add_option("--mode", g.mode, "rotation mode")->check(CLI::IsMember({"so3", "so2"}));
  app.add_flag("--dump-config", g.dump, "print the effective config and exit");

  std::string out_dir = "data", data_dir = "data", ckpt, metrics, report, cloud_in, cloud_out, tmpl;
  bool oracle = false, frozen = false;

  auto* gen = app.add_subcommand("gen", "generate seen and novel episode sets");
  gen->add_option("--out", out_dir, "output directory")->capture_default_str();
  auto* train_cmd = app.add_subcommand("train", "train a policy on <data>/seen");
  train_cmd->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  train_cmd->add_option("--out", ckpt, "checkpoint path")->required();
  train_cmd->add_option("--metrics", metrics, "metrics log path");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate the four conditions");
  eval_cmd->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  auto* ck_opt = eval_cmd->add_option("--checkpoint", ckpt, "checkpoint path");
  eval_cmd->add_flag("--oracle", oracle, "evaluate the ground-truth oracle instead")->excludes(ck_opt);
  eval_cmd->add_option("--report", report, "also write the report to this file");
  auto* canon = app.add_subcommand("canon", "canonicalize a cloud file and print the frame T");
  canon->add_option("input", cloud_in, "cloud file (PCF1 or text)")->required()->check(CLI::ExistingFile);
  canon->add_option("--out", cloud_out, "write x_cn here (.pcf for binary) instead of stdout");
  canon->add_option("--checkpoint", ckpt, "use this checkpoint's estimator");
  auto* equiv = app.add_subcommand("equivtest", "run the equivariance and transport suite");
  auto* grad = app.add_subcommand("gradcheck", "compare reverse-mode gradients with finite differences");
  auto* disp = app.add_subcommand("dispersion", "noise-dispersion study of the estimator features");
  disp->add_option("--checkpoint", ckpt, "use this checkpoint's estimator");
  disp->add_flag("--frozen", frozen, "use the untrained estimator of the config seed");
  disp->add_option("--template", tmpl, "template name (default: data.template)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const HarnessConfig c = effective_config(g);
    if (g.dump) {
      out << dump_config(c);
      return 0;
    }
    if (gen->parsed()) return cmd_gen(c, out_dir, out);
    if (train_cmd->parsed()) return cmd_train(c, data_dir, ckpt, metrics, out);
    if (eval_cmd->parsed()) {
      if (ckpt.empty() && !oracle) {
        err << "error: eval needs --checkpoint or --oracle\n\n" << eval_cmd->help();
        return 2;
      }
      return cmd_eval(c, data_dir, ckpt, oracle, report, out);
    }
    if (canon->parsed()) return cmd_canon(c, ckpt, cloud_in, cloud_out, out);
    if (equiv->parsed()) return report_checks(equivariance_suite(c.policy, c.train.seed), out);
    if (grad->parsed()) return report_checks(gradient_suite(c.policy, c.train.seed), out);
    if (disp->parsed()) return cmd_dispersion(c, ckpt, frozen, tmpl, out);
    err << app.help();
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cpol

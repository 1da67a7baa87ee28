// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "canonpolicy/harness.hpp"

namespace cpol {

namespace {

struct Field {
  std::string key;  // "section.name"
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
  throw Error(ErrorCode::kConfig, "invalid value '" + v + "' for " + key);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

std::string fmt(double v) {
  std::array<char, 64> buf;
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

template <typename T>
Field num(std::string key, T& ref) {
  return {key, [key, &ref](const std::string& v) { ref = parse_number<T>(key, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

Field flag(std::string key, bool& ref) {
  return {key, [key, &ref](const std::string& v) { ref = parse_bool(key, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

std::vector<Field> fields(HarnessConfig& c) {
  PolicyConfig& p = c.policy;
  std::vector<Field> f{
      num("policy.obs_window", p.obs_window),
      num("policy.horizon", p.horizon),
      {"policy.action_mode", [&p](const std::string& v) { p.action_mode = action_mode_from_string(v); },
       [&p] { return std::string(to_string(p.action_mode)); }},
      {"policy.head_kind", [&p](const std::string& v) { p.head_kind = head_kind_from_string(v); },
       [&p] { return std::string(to_string(p.head_kind)); }},
      num("policy.diffusion_steps", p.diffusion_steps),
      num("policy.sample_steps", p.sample_steps),
      flag("policy.canonicalize", p.canonicalize),
      num("policy.min_half_range", p.min_half_range),
      num("vn.repeat_layers", p.vn.repeat_layers),
      num("vn.feat_dim", p.vn.feat_dim),
      num("vn.q", p.vn.q),
      {"vn.mode", [&p](const std::string& v) { p.vn.mode = rot_mode_from_string(v); },
       [&p] { return std::string(to_string(p.vn.mode)); }},
      num("encoder.q", p.enc.q),
      {"encoder.widths",
       [&p](const std::string& v) {
         std::vector<int> w;
         std::stringstream ss(v);
         std::string tok;
         while (std::getline(ss, tok, ',')) w.push_back(parse_number<int>("encoder.widths", trim(tok)));
         p.enc.widths = std::move(w);
       },
       [&p] {
         std::string s;
         for (std::size_t i = 0; i < p.enc.widths.size(); ++i) s += (i ? "," : "") + std::to_string(p.enc.widths[i]);
         return s;
       }},
      num("encoder.out_dim", p.enc.out_dim),
      num("head.hidden", p.head.hidden),
      num("head.blocks", p.head.blocks),
      num("head.time_dim", p.head.time_dim),
      num("consistency.steps", c.consistency.steps),
      num("consistency.augmentations", c.consistency.augmentations),
      num("consistency.max_level", c.consistency.max_level),
      num("consistency.lr", c.consistency.lr),
      num("consistency.trans_range", c.consistency.trans_range),
      num("consistency.log_every", c.consistency.log_every),
      num("consistency.seed", c.consistency.seed),
      num("train.epochs", c.train.epochs),
      num("train.batch_size", c.train.batch_size),
      num("train.lr", c.train.lr),
      num("train.beta1", c.train.beta1),
      num("train.beta2", c.train.beta2),
      flag("train.freeze_phi", c.train.freeze_phi),
      num("train.log_every", c.train.log_every),
      num("train.checkpoint_every", c.train.checkpoint_every),
      num("train.seed", c.train.seed),
      {"data.template",
       [&c](const std::string& v) {
         template_index(v);  // validates the name
         c.data.template_name = v;
       },
       [&c] { return c.data.template_name; }},
      num("data.count", c.data.count),
      num("data.novel_count", c.data.novel_count),
      num("data.max_angle", c.data.max_angle),
      num("data.trans_range", c.data.trans_range),
      num("data.noise_level", c.data.noise_level),
      num("data.start_trans", c.data.start_trans),
      num("data.start_angle", c.data.start_angle),
      num("data.num_points", c.data.num_points),
      num("data.seed", c.data.seed),
      num("eval.success_trans", c.eval.success_trans),
      num("eval.success_angle", c.eval.success_angle),
      num("eval.rd_trans", c.eval.rd_trans),
      num("eval.seed", c.eval.seed),
      num("dispersion.samples", c.dispersion.samples),
      num("dispersion.augmentations", c.dispersion.augmentations),
      num("dispersion.trans_range", c.dispersion.trans_range),
      num("dispersion.seed", c.dispersion.seed),
  };
  return f;
}

}  // namespace

HarnessConfig parse_config(const std::string& text, HarnessConfig base) {
  std::vector<Field> fs = fields(base);
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string s = trim(std::string_view(line).substr(0, hash));
    if (s.empty()) continue;
    const std::string where = " on config line " + std::to_string(line_no);
    if (s.front() == '[') {
      if (s.back() != ']') throw Error(ErrorCode::kConfig, "unterminated section header" + where);
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "expected 'key = value'" + where);
    const std::string name = trim(std::string_view(s).substr(0, eq));
    const std::string value = trim(std::string_view(s).substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    bool found = false;
    for (Field& f : fs) {
      if (f.key == key) {
        f.set(value);
        found = true;
        break;
      }
    }
    if (!found) throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'" + where);
  }
  base.policy.validate();
  return base;
}

HarnessConfig load_config(const std::filesystem::path& path, HarnessConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string dump_config(const HarnessConfig& cfg) {
  HarnessConfig copy = cfg;
  std::string out, section;
  for (const Field& f : fields(copy)) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace cpol

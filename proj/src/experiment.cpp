#include "cadr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "cadr/errors.hpp"

namespace cadr {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

ComparisonRow run_one(const ManifestRun& run, const std::filesystem::path& out_dir) {
  ComparisonRow row;
  row.run = run.name;
  row.group = run.group;
  row.seed = std::to_string(run.config.seed);
  try {
    const auto train = load_dataset(run.dataset);
    std::optional<Dataset> test;
    if (run.test) test = load_dataset(*run.test);
    const auto result = cadr::run(train, test, run.config);
    save_history(result.history, out_dir / (run.name + ".history.csv"));
    save_checkpoint({result.params, result.velocity}, out_dir / (run.name + ".ckpt"));
    if (result.history.records.empty()) {
      row.status = "error: no evaluations (max_iters = 0)";
    } else {
      row.mean_acc = result.history.records.back().mean_acc;
      row.gm_acc = result.history.records.back().gm_acc;
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    row.status = "error: " + msg;
  }
  return row;
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

ExperimentManifest ExperimentManifest::from(const SectionedConfig& cfg, const std::filesystem::path& base_dir) {
  ExperimentManifest m;
  m.output_dir = resolve(base_dir, cfg.global.get_string("output_dir", "."));
  std::set<std::string> known(RunConfig::keys().begin(), RunConfig::keys().end());
  known.insert({"dataset", "test", "group"});
  auto global_known = known;
  global_known.insert("output_dir");
  cfg.global.require_known(global_known);

  std::set<std::string> names;
  for (const auto& section : cfg.sections) {
    if (!names.insert(section.name).second) throw ConfigError("duplicate run name '" + section.name + "'");
    section.values.require_known(known);
    KeyValueConfig merged;
    for (const auto& [k, v] : cfg.global.values())
      if (k != "output_dir") merged.set(k, v);
    for (const auto& [k, v] : section.values.values()) merged.set(k, v);

    ManifestRun run;
    run.name = section.name;
    KeyValueConfig run_keys;
    for (const auto& [k, v] : merged.values())
      if (k != "dataset" && k != "test" && k != "group") run_keys.set(k, v);
    run.config = RunConfig::from(run_keys);
    if (!merged.contains("dataset")) throw ConfigError("run '" + run.name + "' has no dataset");
    run.dataset = resolve(base_dir, merged.get_string("dataset", ""));
    if (merged.contains("test")) run.test = resolve(base_dir, merged.get_string("test", ""));
    run.group = merged.get_string("group", to_string(run.config.mode));
    m.runs.push_back(std::move(run));
  }
  return m;
}

ExperimentManifest ExperimentManifest::load(const std::filesystem::path& path) {
  return from(SectionedConfig::load(path), path.parent_path());
}

void append_aggregates(std::vector<ComparisonRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (r.aggregate) continue;
    if (!groups.count(r.group)) order.push_back(r.group);
    auto& g = groups[r.group];
    if (r.status == "ok") {
      g.first.push_back(r.mean_acc);
      g.second.push_back(r.gm_acc);
    }
  }
  for (const auto& name : order) {
    const auto& [means, gms] = groups[name];
    ComparisonRow agg;
    agg.run = name;
    agg.group = name;
    agg.seed = "all";
    agg.aggregate = true;
    if (means.empty()) {
      agg.status = "error: no successful runs";
    } else {
      const auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (const double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      agg.mean_acc = avg(means);
      agg.gm_acc = avg(gms);
      agg.mean_acc_std = sample_std(means, agg.mean_acc);
      agg.gm_acc_std = sample_std(gms, agg.gm_acc);
    }
    rows.push_back(std::move(agg));
  }
}

std::vector<ComparisonRow> run_manifest(const ExperimentManifest& manifest, unsigned parallel) {
  std::vector<ComparisonRow> rows(manifest.runs.size());
  if (!manifest.runs.empty()) std::filesystem::create_directories(manifest.output_dir);
  const unsigned workers = std::max(1u, std::min<unsigned>(parallel, static_cast<unsigned>(manifest.runs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = run_one(manifest.runs[i], manifest.output_dir);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next++; i < rows.size(); i = next++) rows[i] = run_one(manifest.runs[i], manifest.output_dir);
      });
    }
    for (auto& t : pool) t.join();
  }
  append_aggregates(rows);
  return rows;
}

std::vector<ComparisonRow> report_rows(const std::vector<std::pair<std::string, TrainHistory>>& histories) {
  std::vector<ComparisonRow> rows;
  for (const auto& [name, h] : histories) {
    ComparisonRow r;
    r.run = name;
    r.group = h.mode;
    r.seed = std::to_string(h.seed);
    if (h.records.empty()) {
      r.status = "error: empty history";
    } else {
      r.mean_acc = h.records.back().mean_acc;
      r.gm_acc = h.records.back().gm_acc;
    }
    rows.push_back(std::move(r));
  }
  append_aggregates(rows);
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "run,group,seed,status,mean_acc,gm_acc,mean_acc_std,gm_acc_std\n";
  for (const auto& r : rows) {
    out << r.run << ',' << r.group << ',' << r.seed << ',' << r.status << ',';
    if (r.status == "ok") {
      out << fmt(r.mean_acc) << ',' << fmt(r.gm_acc) << ',';
      if (r.aggregate) out << fmt(r.mean_acc_std) << ',' << fmt(r.gm_acc_std);
      else out << ',';
    } else {
      out << ",,,";
    }
    out << "\n";
  }
  return out.str();
}

std::string plot_data(const std::vector<std::pair<std::string, TrainHistory>>& histories) {
  std::ostringstream out;
  out << "step,run,metric,value\n";
  for (const auto& [name, h] : histories) {
    for (const auto& r : h.records) {
      const auto emit = [&](const std::string& metric, const std::string& value) {
        out << r.step << ',' << name << ',' << metric << ',' << value << "\n";
      };
      emit("mean_acc", fmt(r.mean_acc));
      emit("gm_acc", fmt(r.gm_acc));
      emit("l_cap", fmt(r.l_cap));
      emit("l_cai", fmt(r.l_cai));
      emit("l_supp", fmt(r.l_supp));
      emit("l_cadr", fmt(r.l_cadr));
      for (std::size_t c = 0; c < r.recall.size(); ++c) emit("recall_" + std::to_string(c), fmt(r.recall[c]));
      for (std::size_t c = 0; c < r.accepted.size(); ++c) emit("accepted_" + std::to_string(c), std::to_string(r.accepted[c]));
    }
  }
  return out.str();
}

std::map<std::string, std::vector<EvalRecord>> parse_plot_data(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "step,run,metric,value") throw FormatError("plot data: missing header");
  // run -> step -> record, filled metric by metric.
  std::map<std::string, std::map<std::size_t, EvalRecord>> acc;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string step_s, run, metric, value;
    if (!std::getline(ss, step_s, ',') || !std::getline(ss, run, ',') || !std::getline(ss, metric, ',') ||
        !std::getline(ss, value)) {
      throw FormatError("plot data line " + std::to_string(line_no) + ": expected 4 columns");
    }
    std::size_t step = 0;
    double v = 0.0;
    try {
      step = std::stoull(step_s);
      v = std::stod(value);
    } catch (const std::exception&) {
      throw FormatError("plot data line " + std::to_string(line_no) + ": bad number");
    }
    auto& r = acc[run][step];
    r.step = step;
    const auto indexed = [&](const std::string& prefix, auto& vec, auto cast) {
      std::size_t c = 0;
      try {
        std::size_t used = 0;
        const auto tail = metric.substr(prefix.size());
        c = std::stoul(tail, &used);
        if (used != tail.size()) throw std::invalid_argument(tail);
      } catch (const std::exception&) {
        throw FormatError("plot data line " + std::to_string(line_no) + ": bad metric '" + metric + "'");
      }
      if (vec.size() <= c) vec.resize(c + 1);
      vec[c] = cast(v);
    };
    if (metric == "mean_acc") r.mean_acc = v;
    else if (metric == "gm_acc") r.gm_acc = v;
    else if (metric == "l_cap") r.l_cap = v;
    else if (metric == "l_cai") r.l_cai = v;
    else if (metric == "l_supp") r.l_supp = v;
    else if (metric == "l_cadr") r.l_cadr = v;
    else if (metric.starts_with("recall_")) indexed("recall_", r.recall, [](double x) { return x; });
    else if (metric.starts_with("accepted_"))
      indexed("accepted_", r.accepted, [](double x) { return static_cast<std::uint64_t>(x); });
    else throw FormatError("plot data line " + std::to_string(line_no) + ": unknown metric '" + metric + "'");
  }
  std::map<std::string, std::vector<EvalRecord>> out;
  for (auto& [run, steps] : acc)
    for (auto& [step, rec] : steps) out[run].push_back(std::move(rec));
  return out;
}

std::string run_name_from_path(const std::filesystem::path& path) {
  auto name = path.filename().string();
  for (const std::string suffix : {".history.csv", ".csv"}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) return name.substr(0, name.size() - suffix.size());
  }
  return name;
}

}  // namespace cadr

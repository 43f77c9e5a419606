#include <cstdio>
#include <fstream>
#include <sstream>

#include "cadr/errors.hpp"
#include "cadr/trainer.hpp"

namespace cadr {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": not a number: '" + s + "'");
  }
}

}  // namespace

void write_history_csv(const TrainHistory& h, std::ostream& out) {
  out << "# mode=" << h.mode << "\n# seed=" << h.seed << "\n# classes=" << h.classes << "\n";
  out << "step,mean_acc,gm_acc,l_cap,l_cai,l_supp,l_cadr";
  for (int c = 0; c < h.classes; ++c) out << ",recall_" << c;
  for (int c = 0; c < h.classes; ++c) out << ",accepted_" << c;
  out << "\n";
  for (const auto& r : h.records) {
    out << r.step << ',' << fmt(r.mean_acc) << ',' << fmt(r.gm_acc) << ',' << fmt(r.l_cap) << ',' << fmt(r.l_cai)
        << ',' << fmt(r.l_supp) << ',' << fmt(r.l_cadr);
    for (const double v : r.recall) out << ',' << fmt(v);
    for (const auto v : r.accepted) out << ',' << v;
    out << "\n";
  }
}

void save_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_history_csv(history, out);
}

TrainHistory read_history_csv(std::istream& in, const std::string& source) {
  TrainHistory h;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no);
    if (line.starts_with("#")) {
      const auto kv = KeyValueConfig::parse(line.substr(1), where);
      if (kv.contains("mode")) h.mode = kv.get_string("mode", "");
      if (kv.contains("seed")) h.seed = kv.get_u64("seed", 0);
      if (kv.contains("classes")) h.classes = static_cast<int>(kv.get_int("classes", 0));
      continue;
    }
    const auto cells = split_csv(line);
    const auto expected = 7 + 2 * static_cast<std::size_t>(h.classes);
    if (!header_seen) {
      if (cells.empty() || cells[0] != "step") throw FormatError(where + ": missing history header");
      if (cells.size() != expected) throw FormatError(where + ": header has wrong column count");
      header_seen = true;
      continue;
    }
    if (cells.size() != expected) throw FormatError(where + ": expected " + std::to_string(expected) + " columns");
    EvalRecord r;
    r.step = static_cast<std::size_t>(to_double(cells[0], where));
    r.mean_acc = to_double(cells[1], where);
    r.gm_acc = to_double(cells[2], where);
    r.l_cap = to_double(cells[3], where);
    r.l_cai = to_double(cells[4], where);
    r.l_supp = to_double(cells[5], where);
    r.l_cadr = to_double(cells[6], where);
    const auto c = static_cast<std::size_t>(h.classes);
    for (std::size_t k = 0; k < c; ++k) r.recall.push_back(to_double(cells[7 + k], where));
    for (std::size_t k = 0; k < c; ++k)
      r.accepted.push_back(static_cast<std::uint64_t>(to_double(cells[7 + c + k], where)));
    if (!h.records.empty() && r.step <= h.records.back().step) throw FormatError(where + ": steps must increase");
    h.records.push_back(std::move(r));
  }
  if (!header_seen) throw FormatError(source + ": no history header");
  return h;
}

TrainHistory load_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_history_csv(in, path.string());
}

}  // namespace cadr

#include "fedagg/harness/reports.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fedagg/errors.hpp"

namespace fedagg::harness {
namespace {

using json = nlohmann::json;

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw InvalidInputError(path.string() + ": expected header '" + header + "'");
  }
  const std::size_t columns = split(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != columns) {
      throw InvalidInputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidInputError(where + ": not a number '" + s + "'");
  }
  return x;
}

std::uint64_t parse_uint(const std::string& s, const std::string& where) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidInputError(where + ": not an integer '" + s + "'");
  }
  return x;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

ReportPaths ReportPaths::in(const std::filesystem::path& dir) {
  return {dir / "curves.csv", dir / "runs.csv", dir / "summary.csv", dir / "summary.json"};
}

std::string curves_csv(const ExperimentSummary& summary) {
  std::string out = "run_id,aggregator,seed,round,metric,wallclock_ms\n";
  for (const auto& r : summary.runs) {
    for (const auto& log : r.rounds) {
      out += std::to_string(r.run_id) + "," + r.aggregator + "," + std::to_string(r.seed) + "," +
             std::to_string(log.round) + "," + format_double(log.metric) + "," +
             format_double(log.wallclock_ms) + "\n";
    }
  }
  return out;
}

std::string runs_csv(const ExperimentSummary& summary) {
  std::string out = "run_id,aggregator,seed,final_metric,status\n";
  for (const auto& r : summary.runs) {
    out += std::to_string(r.run_id) + "," + r.aggregator + "," + std::to_string(r.seed) + "," +
           (r.aborted ? std::string("nan") : format_double(r.final_metric)) + "," +
           (r.aborted ? "aborted" : "ok") + "\n";
  }
  return out;
}

std::string summary_csv(const std::vector<AggregatorSummary>& table) {
  std::string out = "aggregator,mean,std,n\n";
  for (const auto& row : table) {
    out += row.aggregator + "," + format_double(row.mean) + "," + format_double(row.std) + "," +
           std::to_string(row.n) + "\n";
  }
  return out;
}

std::string summary_json(const ExperimentSummary& summary) {
  json table = json::array();
  for (const auto& row : summary.table) {
    table.push_back({{"aggregator", row.aggregator},
                     {"mean", number_or_null(row.mean)},
                     {"std", number_or_null(row.std)},
                     {"n", row.n}});
  }
  json runs = json::array();
  json curves = json::array();
  for (const auto& r : summary.runs) {
    json run{{"run_id", r.run_id},
             {"aggregator", r.aggregator},
             {"seed", r.seed},
             {"final_metric", r.aborted ? json(nullptr) : number_or_null(r.final_metric)},
             {"status", r.aborted ? "aborted" : "ok"}};
    if (r.aborted) run["error"] = r.error;
    runs.push_back(std::move(run));
    for (const auto& log : r.rounds) {
      curves.push_back({{"run_id", r.run_id},
                        {"aggregator", r.aggregator},
                        {"seed", r.seed},
                        {"round", log.round},
                        {"metric", number_or_null(log.metric)},
                        {"wallclock_ms", log.wallclock_ms}});
    }
  }
  json doc{{"metric", summary.metric},
           {"summary", table},
           {"runs", runs},
           {"curves", curves},
           {"warnings", summary.warnings}};
  return doc.dump(2) + "\n";
}

void emit_reports(const ExperimentSummary& summary, const ReportPaths& paths) {
  if (summary.runs.empty()) throw InvalidInputError("emit_reports: empty summary");
  const std::vector<std::pair<std::filesystem::path, std::string>> files{
      {paths.curves, curves_csv(summary)},
      {paths.runs, runs_csv(summary)},
      {paths.summary_csv, summary_csv(summary.table)},
      {paths.summary_json, summary_json(summary)},
  };

  std::vector<std::filesystem::path> temps;
  auto discard = [&] {
    std::error_code ignored;
    for (const auto& t : temps) std::filesystem::remove(t, ignored);
  };
  for (const auto& [target, body] : files) {
    std::error_code ec;
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path(), ec);
    if (ec) {
      discard();
      throw IoError("cannot create " + target.parent_path().string() + ": " + ec.message());
    }
    std::filesystem::path temp = target;
    temp += ".tmp";
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (out) temps.push_back(temp);
    out << body;
    out.close();
    if (!out) {
      discard();
      throw IoError("cannot write " + target.string());
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::error_code ec;
    std::filesystem::rename(temps[i], files[i].first, ec);
    if (ec) {
      discard();
      throw IoError("cannot replace " + files[i].first.string() + ": " + ec.message());
    }
  }
}

std::vector<RunRecord> load_runs(const std::filesystem::path& dir) {
  const auto paths = ReportPaths::in(dir);
  std::vector<RunRecord> runs;
  if (std::filesystem::exists(paths.runs)) {
    for (const auto& row :
         read_csv(paths.runs, "run_id,aggregator,seed,final_metric,status")) {
      RunRecord r;
      const std::string where = paths.runs.string();
      r.run_id = parse_uint(row[0], where);
      r.aggregator = row[1];
      r.seed = parse_uint(row[2], where);
      r.aborted = row[4] != "ok";
      r.final_metric = r.aborted ? 0.0 : parse_double(row[3], where);
      runs.push_back(std::move(r));
    }
    return runs;
  }
  if (!std::filesystem::exists(paths.curves)) {
    throw IoError("no runs.csv or curves.csv in " + dir.string());
  }
  std::map<std::size_t, std::size_t> slot;
  for (const auto& row :
       read_csv(paths.curves, "run_id,aggregator,seed,round,metric,wallclock_ms")) {
    const std::string where = paths.curves.string();
    const auto id = parse_uint(row[0], where);
    const auto round = parse_uint(row[3], where);
    auto [it, fresh] = slot.try_emplace(id, runs.size());
    if (fresh) {
      RunRecord r;
      r.run_id = id;
      r.aggregator = row[1];
      r.seed = parse_uint(row[2], where);
      runs.push_back(std::move(r));
    }
    RunRecord& r = runs[it->second];
    if (r.rounds.empty() || round >= r.rounds.back().round) {
      r.rounds.assign(1, sim::RoundLog{});
      r.rounds.back().round = round;
      r.final_metric = parse_double(row[4], where);
    }
  }
  for (auto& r : runs) r.rounds.clear();
  return runs;
}

std::string format_table(const std::vector<AggregatorSummary>& table, const std::string& metric) {
  std::size_t width = std::string("aggregator").size();
  for (const auto& row : table) width = std::max(width, row.aggregator.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %12s  %12s  %4s\n", static_cast<int>(width),
                "aggregator", ("mean " + metric).c_str(), "std", "n");
  out << line;
  for (const auto& row : table) {
    std::snprintf(line, sizeof line, "%-*s  %12.6g  %12.6g  %4zu\n", static_cast<int>(width),
                  row.aggregator.c_str(), row.mean, row.std, row.n);
    out << line;
  }
  return out.str();
}

}  // namespace fedagg::harness

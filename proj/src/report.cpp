#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cloudgate/error.hpp"
#include "cloudgate/eval.hpp"

namespace cloudgate {

using nlohmann::json;

std::string fingerprint(const std::vector<std::pair<std::string, std::string>>& parameters) {
  auto sorted = parameters;
  std::sort(sorted.begin(), sorted.end());
  std::string canonical;
  for (const auto& [k, v] : sorted) {
    canonical += k;
    canonical += '=';
    canonical += v;
    canonical += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(std::as_bytes(std::span(canonical)))));
  return buf;
}

namespace {

int method_rank(const std::string& m) {
  const auto all = all_methods();
  for (std::size_t i = 0; i < all.size(); ++i)
    if (m == to_string(all[i])) return static_cast<int>(i);
  return static_cast<int>(all.size());
}

int modality_rank(const std::string& tag) {
  static const std::array<std::string_view, 6> order{kZeroShot, "S2/RGB", "S2/RGB+SAR",
                                                     "L8/RGB", "L8/B6-B4", "S1/SAR"};
  for (std::size_t i = 0; i < order.size(); ++i)
    if (tag == order[i]) return static_cast<int>(i);
  return static_cast<int>(order.size());
}

auto sort_key(const MetricsReport& r) {
  return std::make_tuple(method_rank(r.method), r.method, modality_rank(r.train_modality),
                         r.train_modality, r.train_dataset, modality_rank(r.test_modality),
                         r.test_modality, r.test_dataset, r.seed, r.config_fingerprint);
}

json rate(double v, bool degenerate) { return degenerate ? json(nullptr) : json(v); }

json to_json(const MetricsReport& r) {
  json j;
  j["method"] = r.method;
  j["train_dataset"] = r.train_dataset;
  j["train_modality"] = r.train_modality;
  j["test_dataset"] = r.test_dataset;
  j["test_modality"] = r.test_modality;
  j["seed"] = r.seed;
  j["status"] = std::string(to_string(r.status));
  if (!r.error.empty()) j["error"] = r.error;
  j["canonical"] = r.canonical;
  j["config_fingerprint"] = r.config_fingerprint;
  j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
  j["tpr"] = rate(r.values.tpr, r.values.tpr_degenerate);
  j["tnr"] = rate(r.values.tnr, r.values.tnr_degenerate);
  j["f1"] = rate(r.values.f1, r.values.f1_degenerate);
  j["precision"] = rate(r.values.precision, r.values.precision_degenerate);
  j["degenerate"] = {{"tpr", r.values.tpr_degenerate},
                     {"tnr", r.values.tnr_degenerate},
                     {"precision", r.values.precision_degenerate},
                     {"f1", r.values.f1_degenerate}};
  json params = json::object();
  for (const auto& [k, v] : r.parameters) params[k] = v;
  j["parameters"] = params;
  return j;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string cell_value(const MetricsReport& r, double v, bool degenerate) {
  if (r.status == CellStatus::NotApplicable) return "N/A";
  if (r.status == CellStatus::Failed) return "failed";
  if (degenerate) return "NaN";
  return fixed3(v);
}

// Column group of the table a report belongs in, or -1.
int column_group(const MetricsReport& r) {
  if (r.test_dataset == "CloudSEN12" && (r.test_modality == "S2/RGB" || r.test_modality == "S2/RGB+SAR"))
    return 0;
  if (r.test_dataset == "SPARCS" && r.test_modality == "L8/RGB") return 1;
  if (r.test_dataset == "SPARCS" && r.test_modality == "L8/B6-B4") return 2;
  return -1;
}

// Row of the table a report belongs in, or -1.
int table_row(const MetricsReport& r, int group) {
  if (group < 0) return -1;
  if (r.method == "text-prompts") return r.train_modality == kZeroShot ? 0 : -1;
  if (r.train_dataset == "CloudSEN12") {
    if (r.method == "linear-probe" && r.train_modality == "S2/RGB") return 1;
    if (r.method == "coop" && r.train_modality == "S2/RGB") return 2;
    if (r.method == "radar" && r.train_modality == "S2/RGB+SAR") return 3;
    return -1;
  }
  if (r.train_dataset == "SPARCS") {
    static const std::array<std::string_view, 3> trained_on{"L8/B6-B4", "L8/RGB", "L8/B6-B4"};
    if (r.train_modality != trained_on[group]) return -1;
    if (r.method == "linear-probe") return 4;
    if (r.method == "coop") return 5;
  }
  return -1;
}

const std::array<std::string_view, 6> kRowNames{"1. Text Prompts", "2a. Linear Probe", "3a. CoOp",
                                                "4a. Radar",       "2b. Linear Probe", "3b. CoOp"};

std::string markdown(const std::vector<MetricsReport>& reports) {
  // (row, seed) -> per-group report
  std::map<std::pair<int, std::uint64_t>, std::array<const MetricsReport*, 3>> grid;
  std::map<int, std::set<std::uint64_t>> seeds_per_row;
  std::vector<const MetricsReport*> other;
  for (const auto& r : reports) {
    const int g = column_group(r);
    const int row = table_row(r, g);
    if (row < 0) {
      other.push_back(&r);
      continue;
    }
    auto& slot = grid[{row, r.seed}];
    if (slot[g]) {
      other.push_back(&r);
      continue;
    }
    slot[g] = &r;
    seeds_per_row[row].insert(r.seed);
  }

  std::ostringstream out;
  auto metric_cells = [&](const MetricsReport* r) {
    if (!r) return std::string(" |  |  |  |");
    return " | " + cell_value(*r, r->values.tpr, r->values.tpr_degenerate) + " | " +
           cell_value(*r, r->values.tnr, r->values.tnr_degenerate) + " | " +
           cell_value(*r, r->values.f1, r->values.f1_degenerate) + " |";
  };

  if (!grid.empty()) {
    out << "| Test Dataset | CloudSEN12 | | | SPARCS | | | | | |\n";
    out << "|:---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
    out << "| Modality | S2/RGB | | | L8/RGB | | | L8/B6-B4 | | |\n";
    out << "| | TPR | TNR | F1 | TPR | TNR | F1 | TPR | TNR | F1 |\n";
    bool a_header = false, b_header = false;
    for (const auto& [key, slots] : grid) {
      const auto [row, seed] = key;
      if (row >= 1 && row <= 3 && !a_header) {
        out << "| *Trained on:* | S2/RGB | | | S2/RGB | | | S2/RGB | | |\n";
        a_header = true;
      }
      if (row >= 4 && !b_header) {
        out << "| *Trained on:* | L8/B6-B4 | | | L8/RGB | | | L8/B6-B4 | | |\n";
        b_header = true;
      }
      std::string name(kRowNames[row]);
      if (seeds_per_row[row].size() > 1) name += " (seed " + std::to_string(seed) + ")";
      out << "| " << name;
      for (int g = 0; g < 3; ++g) {
        const std::string cells = metric_cells(slots[g]);
        out << cells.substr(0, cells.size() - 2);
      }
      out << " |\n";
    }
  }

  if (!other.empty()) {
    if (!grid.empty()) out << "\n";
    out << "| Method | Trained on | Tested on | Seed | TPR | TNR | F1 | n |\n";
    out << "|:---|:---|:---|---:|---:|---:|---:|---:|\n";
    for (const auto* r : other) {
      const std::string train =
          r->train_dataset.empty() ? r->train_modality : r->train_dataset + " " + r->train_modality;
      const std::string test =
          r->test_dataset.empty() ? r->test_modality : r->test_dataset + " " + r->test_modality;
      out << "| " << r->method << " | " << train << " | " << test << " | " << r->seed;
      const std::string cells = metric_cells(r);
      out << cells.substr(0, cells.size() - 2) << " | " << r->counts.total() << " |\n";
    }
  }

  std::vector<std::string> notes;
  for (const auto& r : reports) {
    const std::string where = r.method + " " + r.train_modality + " -> " +
                              (r.test_dataset.empty() ? "" : r.test_dataset + " ") +
                              r.test_modality + " (seed " + std::to_string(r.seed) + ")";
    if (r.status == CellStatus::Failed) notes.push_back("failed: " + where + ": " + r.error);
    else if (!r.canonical) notes.push_back("non-canonical training budget: " + where);
  }
  if (!notes.empty()) {
    out << "\n";
    for (const auto& n : notes) out << "- " << n << "\n";
  }
  return out.str();
}

}  // namespace

std::string emit_report(std::vector<MetricsReport> reports, ReportFormat format) {
  if (reports.empty()) throw Error(Errc::Empty, "no reports to emit");
  std::stable_sort(reports.begin(), reports.end(),
                   [](const auto& a, const auto& b) { return sort_key(a) < sort_key(b); });
  if (format == ReportFormat::Json) {
    json doc;
    doc["reports"] = json::array();
    for (const auto& r : reports) doc["reports"].push_back(to_json(r));
    return doc.dump(2) + "\n";
  }
  return markdown(reports);
}

}  // namespace cloudgate

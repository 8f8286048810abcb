#include "towl/report.hpp"

#include <sstream>

#include <json.hpp>

#include "towl/format.hpp"

namespace towl {

std::string metrics_text(const EvaluationMetrics& metrics) {
  const AccuracyReport& acc = metrics.accuracy;
  std::ostringstream out;
  out << "accuracy=" << format_double(acc.accuracy) << '\n';
  out << "correct=" << acc.correct << '\n';
  out << "total=" << acc.total << '\n';
  for (const auto& [label, recall] : acc.per_class_recall) {
    out << "recall." << label << '=' << format_double(recall) << '\n';
  }
  out << "unknown_recall=" << format_double(acc.unknown_recall) << '\n';
  out << "unknown_total=" << acc.unknown_total << '\n';
  out << "a=" << format_double(metrics.agent.a) << '\n';
  out << "a_k=" << format_double(metrics.agent.a_k) << '\n';
  out << "a_u=" << format_double(metrics.agent.a_u) << '\n';
  out << "n_test=" << metrics.n_test << '\n';
  return out.str();
}

std::string metrics_json(const EvaluationMetrics& metrics, std::span<const EpochRecord> trace) {
  const AccuracyReport& acc = metrics.accuracy;
  nlohmann::ordered_json j;
  j["accuracy"] = acc.accuracy;
  j["correct"] = acc.correct;
  j["total"] = acc.total;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [label, r] : acc.per_class_recall) recall[std::to_string(label)] = r;
  j["per_class_recall"] = recall;
  j["unknown_recall"] = acc.unknown_recall;
  j["unknown_total"] = acc.unknown_total;
  j["a"] = metrics.agent.a;
  j["a_k"] = metrics.agent.a_k;
  j["a_u"] = metrics.agent.a_u;
  j["n_test"] = metrics.n_test;
  if (!trace.empty()) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const EpochRecord& r : trace) {
      rows.push_back({{"epoch", r.epoch},
                      {"l_k", r.l_k},
                      {"l_u", r.l_u},
                      {"l_total", r.l_total},
                      {"acc_val", r.acc_val}});
    }
    j["trace"] = rows;
  }
  return j.dump(2) + "\n";
}

}  // namespace towl

#pragma once

#include <string>
#include <vector>

#include "zootune/complexity.hpp"
#include "zootune/errors.hpp"
#include "zootune/format.hpp"
#include "zootune/fs_util.hpp"
#include "zootune/training.hpp"

namespace zootune {

// Gate traces, one row per (iteration, layer, source), iteration order.
inline void write_gates_csv(const RunRecord& rec, const std::string& path) {
  std::string out = "iteration,layer,source,gate_mean\n";
  for (const GateTraceRow& r : rec.gate_trace) {
    out += std::to_string(r.iteration);
    out += ',';
    out += r.layer;
    out += ',';
    out += std::to_string(r.source);
    out += ',';
    out += format_g(r.gate_mean);
    out += '\n';
  }
  atomic_write_file(path, out);
}

// Eval-point log: train loss and eval metric at each recorded iteration.
inline void write_run_csv(const RunRecord& rec, const std::string& path) {
  std::string out = "iteration,train_loss,eval_metric\n";
  for (const EvalPoint& p : rec.eval_points) {
    out += std::to_string(p.iteration);
    out += ',';
    out += format_g(p.train_loss);
    out += ',';
    out += format_g(p.eval_metric);
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline void write_complexity_csv(const ComplexityReport& report, const std::string& path) {
  std::string out =
      "layer,phase,base_macs,align_macs,gating_macs,agg_macs,"
      "params_sources,params_align,params_gates,params_bn,params_head\n";
  for (const ComplexityRow& r : report.rows) {
    out += r.layer;
    out += ',';
    out += r.phase;
    out += ',';
    out += std::to_string(r.base_macs) + ',' + std::to_string(r.align_macs) + ',' +
           std::to_string(r.gating_macs) + ',' + std::to_string(r.agg_macs) + ',' +
           std::to_string(r.params_sources) + ',' + std::to_string(r.params_align) + ',' +
           std::to_string(r.params_gates) + ',' + std::to_string(r.params_bn) + ',' +
           std::to_string(r.params_head);
    out += '\n';
  }
  atomic_write_file(path, out);
}

// Minimal reader for round-trip checks: rows of comma-split cells, header first.
inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  for (char c : text) {
    if (c == ',') {
      row.push_back(cell);
      cell.clear();
    } else if (c == '\n') {
      row.push_back(cell);
      cell.clear();
      rows.push_back(row);
      row.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (!cell.empty() || !row.empty()) {
    row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace zootune

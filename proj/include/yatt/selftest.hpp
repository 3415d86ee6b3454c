#pragma once

#include <string>
#include <vector>

namespace yatt::selftest {

struct SuiteReport {
  std::string name;
  int cases = 0;
  double max_error = 0;
  bool passed = false;
  std::string detail;
};

// Each suite cross-checks one subsystem against an independent
// computation: sharded attention vs the dense reference, ternary search
// vs exhaustive scan, bucketed padding waste vs its closed-form bound,
// rpc delivery under injected faults vs an execution counter,
// dataloader resharding vs the single-rank sample stream, and the run
// summary vs numbers recomputed from the trace it claims to summarize.
std::vector<SuiteReport> run_all();

bool all_passed(const std::vector<SuiteReport>& reports);

std::string format_report(const std::vector<SuiteReport>& reports);

}  // namespace yatt::selftest

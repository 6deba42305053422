#pragma once

#include "greybox/bench.hpp"
#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/cost.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/gradsys.hpp"
#include "greybox/optimizer.hpp"
#include "greybox/sparsity.hpp"

#include "json.hpp"

#include <string>

namespace greybox {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Finite numbers as-is; non-finite as "inf", "-inf" or "nan".
json number_to_json(double v);
double number_from_json(const json& j, const std::string& what);

json to_json(const Vec& v);
/// Row-major nested arrays.
json to_json(const Mat& m);
Vec vec_from_json(const json& j, const std::string& what);
Mat mat_from_json(const json& j, const std::string& what);

/// Dictionary names plus omega, w, b.
json to_json(const BlackBox& bb);
BlackBox blackbox_from_json(const json& j);

json to_json(const CostBreakdown& c);
json to_json(const MonitorVerdict& v);
/// History is downsampled to at most max_history entries (first and last kept).
json to_json(const IdentResult& r, std::size_t max_history = 200);
json to_json(const SparsityCertificate& c);
json to_json(const CertificationRun& run);
json to_json(const IdentifiabilityReport& r);
json to_json(const ErrorBoundEstimate& e);
json to_json(const LogisticReport& r);
json to_json(const TanksReport& r);

/// {"schema": 1, "error": {"kind", "message", "exit_code"}}.
json error_json(const std::string& kind, const std::string& message, int exit_code);

/// JSON with comments allowed.
json read_json_file(const std::string& path);
json parse_json_text(const std::string& text, const std::string& origin);
void write_json_file(const std::string& path, const json& j);

void write_history_csv(const std::string& path, const IdentResult& r);
void write_trace_csv(const std::string& path, const GradientTrace& trace);

}  // namespace greybox

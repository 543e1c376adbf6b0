#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "fipo/config.hpp"
#include "fipo/trainer.hpp"

namespace fipo {

enum class AblationAxis { tau, f_clip, filtering, clip_high };

AblationAxis parse_ablation_axis(std::string_view name);
std::string_view to_string(AblationAxis axis);

// Splits "8,32,128,256" into its items; empty items are rejected.
std::vector<std::string> split_values(std::string_view list);

// Applies one ablation value to a copy of `base`. Value syntax per axis:
//   tau        number or "inf"
//   f_clip     "low:high" bounds, e.g. "0.8:1.2"
//   filtering  on|off
//   clip_high  eps_high in (0, 1)
// The FIPO axes also force loss.kind = fipo.
RunConfig apply_ablation(const RunConfig& base, AblationAxis axis, const std::string& value);

struct AblationRow {
    std::string value;
    RunSummary summary;
};

struct AblationOptions {
    std::string out_dir;  // one sub-directory per value plus ablate_<axis>.csv
    std::function<void(const std::string& value, const StepMetrics&)> on_step;
};

std::vector<AblationRow> run_ablation(const RunConfig& base, AblationAxis axis, const std::vector<std::string>& values,
                                      const AblationOptions& options);

void write_ablation_csv(std::ostream& out, AblationAxis axis, const std::vector<AblationRow>& rows);

}  // namespace fipo

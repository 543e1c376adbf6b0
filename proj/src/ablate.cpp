#include "fipo/ablate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fipo/errors.hpp"

namespace fipo {

AblationAxis parse_ablation_axis(std::string_view name) {
    if (name == "tau") return AblationAxis::tau;
    if (name == "f_clip") return AblationAxis::f_clip;
    if (name == "filtering") return AblationAxis::filtering;
    if (name == "clip_high") return AblationAxis::clip_high;
    throw ConfigError("unknown ablation axis '" + std::string(name) + "' (expected tau, f_clip, filtering, clip_high)");
}

std::string_view to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::tau:
            return "tau";
        case AblationAxis::f_clip:
            return "f_clip";
        case AblationAxis::filtering:
            return "filtering";
        case AblationAxis::clip_high:
            return "clip_high";
    }
    return "?";
}

std::vector<std::string> split_values(std::string_view list) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = list.find(',', start);
        const std::string_view item = list.substr(start, comma == std::string_view::npos ? list.npos : comma - start);
        if (item.empty()) {
            throw ConfigError("ablation values: empty item in '" + std::string(list) + "'");
        }
        out.emplace_back(item);
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

RunConfig apply_ablation(const RunConfig& base, AblationAxis axis, const std::string& value) {
    RunConfig cfg = base;
    switch (axis) {
        case AblationAxis::tau:
            apply_override(cfg, "fipo.tau", value);
            cfg.loss.kind = LossKind::fipo;
            break;
        case AblationAxis::f_clip: {
            const auto colon = value.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("f_clip ablation value '" + value + "': expected low:high");
            }
            apply_override(cfg, "fipo.f_clip", "[" + value.substr(0, colon) + "," + value.substr(colon + 1) + "]");
            cfg.loss.kind = LossKind::fipo;
            break;
        }
        case AblationAxis::filtering:
            if (value != "on" && value != "off") {
                throw ConfigError("filtering ablation value '" + value + "': expected on or off");
            }
            cfg.fipo.filtering = value == "on";
            cfg.loss.kind = LossKind::fipo;
            break;
        case AblationAxis::clip_high:
            apply_override(cfg, "loss.eps_high", value);
            break;
    }
    cfg.validate();
    return cfg;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, AblationAxis axis, const std::vector<std::string>& values,
                                      const AblationOptions& options) {
    std::vector<RunConfig> configs;
    for (const auto& v : values) {
        configs.push_back(apply_ablation(base, axis, v));
    }
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        RunOptions run;
        if (!options.out_dir.empty()) {
            std::string dir_name = std::string(to_string(axis)) + "_" + values[i];
            std::replace(dir_name.begin(), dir_name.end(), ':', '-');
            run.out_dir = (std::filesystem::path(options.out_dir) / dir_name).string();
        }
        if (options.on_step) {
            run.on_step = [&, v = values[i]](const StepMetrics& m) { options.on_step(v, m); };
        }
        rows.push_back({values[i], run_training(configs[i], run)});
    }
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        std::ofstream csv(std::filesystem::path(options.out_dir) / ("ablate_" + std::string(to_string(axis)) + ".csv"));
        write_ablation_csv(csv, axis, rows);
        if (!csv) {
            throw std::runtime_error("failed writing ablation CSV in " + options.out_dir);
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& out, AblationAxis axis, const std::vector<AblationRow>& rows) {
    out << "schema_version,axis,value,loss_kind,steps_run,peak_eval_mean_at_k,peak_eval_step,final_eval_mean_at_k,"
           "mean_response_length,mean_entropy,wall_seconds\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        const auto& s = r.summary;
        out << kSchemaVersion << ',' << to_string(axis) << ',' << r.value << ',' << s.loss_kind << ',' << s.steps_run
            << ',' << s.peak_eval_mean_at_k << ',' << s.peak_eval_step << ',' << s.final_eval_mean_at_k << ','
            << s.mean_response_length << ',' << s.mean_entropy << ',' << s.wall_seconds << '\n';
    }
}

}  // namespace fipo

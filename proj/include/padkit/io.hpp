#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "padkit/denoiser.hpp"
#include "padkit/imagekit.hpp"

namespace padkit::io {

namespace fs = std::filesystem;

// ------------------------------------------------------------------- tensors
//
// A tensor is a pair of files sharing a stem: `<stem>.json` (sidecar) and `<stem>.bin`
// (raw little-endian elements, row-major). Paths may name the stem or either file.

enum class DType { f64, i32 };

std::string_view to_string(DType d);

struct TensorHeader {
    Eigen::Index height = 0;
    Eigen::Index width = 0;
    DType dtype = DType::f64;
    std::string unit_tag; // raw|suv|normalized for f64, "label" for i32

    [[nodiscard]] std::size_t element_size() const { return dtype == DType::f64 ? 8 : 4; }
    [[nodiscard]] std::uintmax_t byte_count() const {
        return std::uintmax_t(height) * std::uintmax_t(width) * element_size();
    }
};

fs::path sidecar_path(const fs::path& path);
fs::path blob_path(const fs::path& path);

TensorHeader read_tensor_header(const fs::path& path);
ScalarGrid2D read_scalar(const fs::path& path);
LabelGrid2D read_labels(const fs::path& path);
std::variant<ScalarGrid2D, LabelGrid2D> read_tensor(const fs::path& path);

void write_tensor(const ScalarGrid2D& grid, const fs::path& path);
void write_tensor(const LabelGrid2D& grid, const fs::path& path);

// ----------------------------------------------------------------------- CSV

/// Header plus string cells; every row must have the header's width.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const;
    /// Strictly parsed numeric column.
    [[nodiscard]] std::vector<double> numbers(const std::string& name) const;
};

CsvTable read_csv(const fs::path& path);
CsvTable parse_csv(std::istream& is, const std::string& source = "csv");

// ---------------------------------------------------------------- run config

struct PhantomSettings {
    int count = 450;
    Eigen::Index grid_size = 32;
    int organ_count = 4;
    std::uint64_t seed = 1000;
};

struct EvalSettings {
    int glcm_bins = 32;
    int bootstrap_resamples = 1000;
    std::uint64_t bootstrap_seed = 2024;
    double alpha = 0.05;
    double threshold_fraction = 0.41;
};

struct RunConfig {
    NormalizationParams normalization;
    PhantomSettings phantoms;
    TrainConfig base = TrainConfig::defaults_for(Phase::base);
    TrainConfig super_res = TrainConfig::defaults_for(Phase::super_res);
    std::uint64_t generate_seed = 99;
    EvalSettings eval;

    [[nodiscard]] const TrainConfig& train(Phase p) const { return p == Phase::base ? base : super_res; }
    void validate() const;
};

/// Desk-scale defaults with every seed spelled out.
RunConfig default_run_config();

/// Missing keys keep their defaults; unknown keys and mistyped values are config errors.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const fs::path& path);
std::string dump_run_config(const RunConfig& config);

} // namespace padkit::io

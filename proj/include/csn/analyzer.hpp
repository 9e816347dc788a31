#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csn/arch.hpp"

namespace csn {

// Static per-layer accounting. One multiply-accumulate counts as one FLOP;
// params and flops cover conv and fc layers (fc includes its bias in params);
// interactions = c_out * C(c_in/G, 2) counts conv layers only, so pool and fc
// rows carry zero.
struct LayerStats {
  std::string name;
  std::string kind;  // conv | pointwise | depthwise | maxpool | avgpool | fc
  ConvSpec spec;     // echo; synthesized for the non-conv rows
  Shape5 out_shape;
  std::int64_t out_voxels = 0;  // t*h*w at this layer's output
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t interactions = 0;
};

struct Conventions {
  bool flops_use_input_voxels = false;  // default: output positions
  bool count_bn_params = false;         // default: BN affine excluded from the headline
};

struct ModelReport {
  std::string arch;
  Shape5 input;
  Conventions conventions;
  std::vector<LayerStats> layers;
  std::int64_t total_params = 0;
  std::int64_t total_flops = 0;
  std::int64_t total_interactions = 0;
  std::int64_t bn_params = 0;  // scale+shift across all BN layers, reported separately
  std::int64_t depth = 0;
};

// Eq-style accounting for a single conv layer at the given output voxel count.
LayerStats layer_stats(const ConvSpec& spec, std::int64_t out_voxels);

// Walks the architecture's layer plan propagating shapes from `input`.
ModelReport model_report(const ArchSpec& arch, const Shape5& input,
                         const Conventions& conventions = {});

// Canonical serializations. The JSON is byte-stable across runs: fixed key
// order, exact integers, scaled decimals rendered with fixed precision.
std::string report_json(const ModelReport& report);
std::string report_csv(const ModelReport& report);

// --- variant sweeps ----------------------------------------------------------

struct SweepRow {
  std::string variant;
  std::int64_t group = 1;  // group count on the varied layers; 0 = per-channel
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t interactions = 0;
  ArchSpec arch;  // the variant itself, for training it downstream
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRow> rows;
  std::vector<std::string> warnings;  // skipped (indivisible) variants
};

// axis is one of "groups-3x3x3" (group the 3x3x3 layers, ending in the
// depthwise row), "groups-1x1x1" (depthwise 3x3x3 held fixed, group counts
// applied to the 1x1x1 layers), or "block-kind" (one row per block family
// compatible with the base layout).
SweepResult sweep_stats(const ArchSpec& base, const std::string& axis,
                        const Shape5& input = {1, 3, 8, 224, 224});

std::string sweep_csv(const SweepResult& sweep);

// --- published reference totals ----------------------------------------------

// Reference totals for the standard 8-frame 224x224, 400-class configuration,
// as reported alongside these architectures (FLOPs x1e9, params x1e6,
// interactions x1e9). Backs `analyze --check table2` and the acceptance suite.
struct Table2Row {
  const char* arch;
  double flops_e9;
  double params_e6;
  double interactions_e9;
};

const std::vector<Table2Row>& table2_reference();

// Compares analyzer totals against the reference rows at the documented
// tolerances (interactions 2%, params 3%, FLOPs 15%).
struct Table2Check {
  std::string arch;
  double flops_err = 0.0;  // relative errors vs the reference
  double params_err = 0.0;
  double interactions_err = 0.0;
  bool pass = false;
};

std::vector<Table2Check> check_table2(const Shape5& input = {1, 3, 8, 224, 224},
                                      std::int64_t num_classes = 400);

}  // namespace csn

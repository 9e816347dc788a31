#include "csn/analyzer.hpp"

namespace csn {

// Published complexity totals for the 8x224x224, 400-class configuration.
// Columns: FLOPs x1e9, params x1e6, channel interactions x1e9. The analyzer
// must land within the documented tolerances of every row (see the
// acceptance suite); `csn analyze --check table2` compares against them too.
const std::vector<Table2Row>& table2_reference() {
  static const std::vector<Table2Row> rows = {
      {"resnet3d-26", 14.3, 20.4, 0.42},
      {"ir-csn-26", 4.0, 1.7, 0.27},
      {"ip-csn-26", 5.0, 2.4, 0.42},
      {"resnet3d-50", 29.5, 46.9, 5.68},
      {"ir-csn-50", 10.6, 13.1, 5.42},
      {"ip-csn-50", 11.9, 14.3, 5.68},
      {"resnet3d-101", 44.7, 85.9, 8.67},
      {"ir-csn-101", 14.1, 22.1, 8.27},
      {"ip-csn-101", 15.9, 24.5, 8.67},
  };
  return rows;
}

}  // namespace csn

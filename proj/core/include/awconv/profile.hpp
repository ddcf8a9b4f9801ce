#pragma once

#include <string>
#include <vector>

#include "awconv/models.hpp"

namespace awconv {

struct LayerProfile {
  std::string name;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;
  int64_t out_c = 0, out_h = 0, out_w = 0;
};

// Exact integer accounting over a LayerGraph; totals equal the sum of rows.
struct ProfileReport {
  std::string arch, attention;
  int64_t input_hw = 0;
  int64_t total_params = 0;
  int64_t total_flops = 0;
  std::vector<LayerProfile> rows;
};

// Counting convention, printed in report headers: one multiply-accumulate is
// one FLOP; element-wise, normalization, and activation work is one op per
// element; pooling is one op per output element; replication and reshapes are
// free. FLOPs are per sample (batch size 1).
const char* flop_convention();

ProfileReport count_params(const LayerGraph& g);
ProfileReport count_flops(const LayerGraph& g, int64_t input_hw);

std::string format_report(const ProfileReport& r, bool with_flops, bool per_layer);
std::string format_records(const ProfileReport& r, bool with_flops);

// Two-decimal human figures. Totals round to the nearest hundredth; overhead
// figures truncate toward zero, so a raw 0.1652M prints as "0.16M".
std::string millions_str(int64_t count);
std::string giga_str(int64_t count);
std::string millions_floor_str(int64_t count);
std::string giga_floor_str(int64_t count);

}  // namespace awconv

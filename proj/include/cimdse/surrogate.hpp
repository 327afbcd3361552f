#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cimdse/design_space.hpp"

namespace cimdse {

enum class LayerKind { conv, linear, attention };

const char* to_string(LayerKind kind) noexcept;

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::linear;
  // Weight matrix mapped onto the array: rows = fan-in, cols = outputs.
  // For attention the "weights" are the stationary operand (K^T or V).
  std::int64_t weight_rows = 1;
  std::int64_t weight_cols = 1;
  // Input vectors presented per inference.
  std::int64_t activations = 1;
  // 8-bit operations (one multiply or one add each).
  double ops = 1;
};

struct Workload {
  std::string name;
  std::vector<LayerDesc> layers;
  bool uses_dcim = false;

  void validate() const;
  double total_ops() const;
};

// Builtin layer tables. Known names: VGG8, ResNet-18, ResNet-34, ResNet-50,
// Swin-T, ViT-B. Dataset selects the input resolution and class count
// (CIFAR-10, CIFAR-100, ImageNet).
Workload make_workload(const std::string& model, const std::string& dataset = "ImageNet");
std::vector<std::string> builtin_workload_names();

struct DeviceCoeffs {
  double cell_area_um2 = 0;
  double read_energy_fJ = 0;    // per cell per input bit
  double read_delay_ns = 0;     // sense time before the ADC
  double leakage_mW_per_mm2 = 0;
};

// Coefficients of the first-order analytic model. All values positive.
struct SurrogateConfig {
  DeviceCoeffs sram{6.0, 5.85, 1.0, 0.05};
  DeviceCoeffs rram{1.2, 26.0, 2.0, 0.004};
  DeviceCoeffs fefet{1.0, 9.1, 3.0, 0.004};

  // Per-converter coefficients at a 128-row reference load.
  double flash_area_um2 = 200;      // x 2^bits
  double flash_energy_fJ = 78;      // x 2^bits per conversion
  double flash_delay_ns = 1.0;
  double sar_area_um2 = 1100;       // x bits
  double sar_energy_fJ = 234;       // x bits per conversion
  double sar_delay_ns = 0.6;        // x bits
  double adc_reference_rows = 128;

  // Row/column periphery per cell at the reference load.
  double wordline_area_um2 = 0.4;
  double column_area_um2 = 0.6;
  double bitline_delay_ns_per_row = 0.004;
  double wordline_delay_ns_per_col = 0.003;

  double tile_energy_pJ = 78;        // control + input drivers per tile per input bit
  double accumulate_energy_fJ = 390; // per partial-sum add
  double buffer_energy_fJ = 325;     // per activation element moved
  double accumulate_area_um2 = 800;  // per output column per layer
  double accumulate_delay_ns = 0.5;  // per adder-tree level

  // Digital CIM for attention layers.
  double dcim_cell_area_um2 = 18;
  double dcim_tree_area_um2 = 240;   // per column per tree level
  double dcim_cell_energy_fJ = 19.5; // per bit cell per input bit, padded cells included
  double dcim_pass_energy_pJ = 26;
  double dcim_cycle_ns = 1.2;
  double dcim_tree_delay_ns = 0.25;
  double dcim_macros = 64;

  double bubble_factor = 0.6;
  double duplication_factor = 2;
  double global_area_mm2 = 400;

  std::int64_t input_bits = 8;
  std::int64_t weight_bits = 8;
  double technode_nm = 22;

  // Multiplicative log-normal noise on area/energy/latency; off by default.
  bool noise = false;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  // First-order scaling from the 22 nm reference: area ~ s^2, energy ~ s,
  // delay ~ sqrt(s) with s = nm / 22.
  SurrogateConfig at_node(double nm) const;
  const DeviceCoeffs& device(const std::string& name) const;
};

enum class Metric { area, power, latency, energy_eff, compute_eff, throughput, fom };

const char* to_string(Metric m) noexcept;
Metric metric_from_string(const std::string& s);

struct PpaRecord {
  double area_mm2 = 0;
  double power_mW = 0;
  double latency_ms = 0;
  double energy_eff = 0;   // TOPS/W
  double compute_eff = 0;  // TOPS/mm^2
  double throughput = 0;   // TOPS
  double fom = 0;          // TOPS^2/W/mm^2

  double metric(Metric m) const;
  friend bool operator==(const PpaRecord&, const PpaRecord&) = default;
};

// Derives the rate metrics from the three primitive quantities.
PpaRecord make_record(double area_mm2, double energy_pJ, double latency_ms, double ops);

// Pure function of (point, workload, cfg). Required point entries: memCellType,
// rowACIM, colACIM, typeADC, levelADC, muxColADC; weightDup optional
// (default 0); rowDCIM/colDCIM required when the workload uses DCIM.
PpaRecord simulate(const DesignPoint& point, const Workload& workload, const SurrogateConfig& cfg);

// Same as simulate per element, evaluated on up to `parallelism` threads.
// An element failure is rethrown naming its index.
std::vector<PpaRecord> batch_simulate(std::span<const DesignPoint> points, const Workload& workload,
                                      const SurrogateConfig& cfg, std::size_t parallelism = 1);

}  // namespace cimdse

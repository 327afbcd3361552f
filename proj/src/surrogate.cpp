#include "cimdse/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <thread>

namespace cimdse {

const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::attention: return "attention";
  }
  return "linear";
}

void Workload::validate() const {
  if (layers.empty()) throw Error(ErrorKind::config, "workload '" + name + "' has no layers");
  bool attention = false;
  for (const auto& l : layers) {
    if (l.weight_rows < 1 || l.weight_cols < 1 || l.activations < 1 || !(l.ops >= 1)) {
      throw Error(ErrorKind::config, "layer '" + l.name + "' has a nonpositive count");
    }
    attention = attention || l.kind == LayerKind::attention;
  }
  if (attention != uses_dcim) throw Error(ErrorKind::config, "uses_dcim must match presence of attention layers");
}

double Workload::total_ops() const {
  double s = 0;
  for (const auto& l : layers) s += l.ops;
  return s;
}

const char* to_string(Metric m) noexcept {
  switch (m) {
    case Metric::area: return "area";
    case Metric::power: return "power";
    case Metric::latency: return "latency";
    case Metric::energy_eff: return "energy_eff";
    case Metric::compute_eff: return "compute_eff";
    case Metric::throughput: return "throughput";
    case Metric::fom: return "fom";
  }
  return "fom";
}

Metric metric_from_string(const std::string& s) {
  for (auto m : {Metric::area, Metric::power, Metric::latency, Metric::energy_eff, Metric::compute_eff,
                 Metric::throughput, Metric::fom}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorKind::config, "unknown metric '" + s + "'");
}

double PpaRecord::metric(Metric m) const {
  switch (m) {
    case Metric::area: return area_mm2;
    case Metric::power: return power_mW;
    case Metric::latency: return latency_ms;
    case Metric::energy_eff: return energy_eff;
    case Metric::compute_eff: return compute_eff;
    case Metric::throughput: return throughput;
    case Metric::fom: return fom;
  }
  return fom;
}

PpaRecord make_record(double area_mm2, double energy_pJ, double latency_ms, double ops) {
  if (!(area_mm2 > 0) || !(energy_pJ > 0) || !(latency_ms > 0) || !(ops > 0) || !std::isfinite(area_mm2) ||
      !std::isfinite(energy_pJ) || !std::isfinite(latency_ms)) {
    throw Error(ErrorKind::model_config, "nonpositive or non-finite primitive quantity");
  }
  const double energy_J = energy_pJ * 1e-12;
  const double latency_s = latency_ms * 1e-3;
  PpaRecord r;
  r.area_mm2 = area_mm2;
  r.latency_ms = latency_ms;
  r.power_mW = energy_J / latency_s * 1e3;
  r.throughput = ops / latency_s / 1e12;
  r.energy_eff = ops / energy_J / 1e12;
  r.compute_eff = r.throughput / area_mm2;
  r.fom = r.energy_eff * r.compute_eff;
  return r;
}

// ---------------------------------------------------------------------------

void SurrogateConfig::validate() const {
  const double coeffs[] = {sram.cell_area_um2, sram.read_energy_fJ, sram.read_delay_ns, sram.leakage_mW_per_mm2,
                           rram.cell_area_um2, rram.read_energy_fJ, rram.read_delay_ns, rram.leakage_mW_per_mm2,
                           fefet.cell_area_um2, fefet.read_energy_fJ, fefet.read_delay_ns, fefet.leakage_mW_per_mm2,
                           flash_area_um2, flash_energy_fJ, flash_delay_ns, sar_area_um2, sar_energy_fJ,
                           sar_delay_ns, adc_reference_rows, wordline_area_um2, column_area_um2,
                           bitline_delay_ns_per_row, wordline_delay_ns_per_col, tile_energy_pJ,
                           accumulate_energy_fJ, buffer_energy_fJ, accumulate_area_um2, accumulate_delay_ns,
                           dcim_cell_area_um2, dcim_tree_area_um2, dcim_cell_energy_fJ, dcim_pass_energy_pJ,
                           dcim_cycle_ns, dcim_tree_delay_ns, dcim_macros, bubble_factor, duplication_factor,
                           global_area_mm2, technode_nm, noise_sigma};
  for (double c : coeffs) {
    if (!(c > 0) || !std::isfinite(c)) throw Error(ErrorKind::model_config, "surrogate coefficients must be > 0");
  }
  if (input_bits < 1 || weight_bits < 1) throw Error(ErrorKind::model_config, "precisions must be >= 1 bit");
}

SurrogateConfig SurrogateConfig::at_node(double nm) const {
  if (!(nm > 0)) throw Error(ErrorKind::model_config, "technology node must be > 0");
  SurrogateConfig c = *this;
  const double s = nm / technode_nm;
  const double a = s * s;
  const double d = std::sqrt(s);
  for (auto* dev : {&c.sram, &c.rram, &c.fefet}) {
    dev->cell_area_um2 *= a;
    dev->read_energy_fJ *= s;
    dev->read_delay_ns *= d;
  }
  c.flash_area_um2 *= a;
  c.sar_area_um2 *= a;
  c.wordline_area_um2 *= a;
  c.column_area_um2 *= a;
  c.accumulate_area_um2 *= a;
  c.dcim_cell_area_um2 *= a;
  c.dcim_tree_area_um2 *= a;
  c.global_area_mm2 *= a;
  c.flash_energy_fJ *= s;
  c.sar_energy_fJ *= s;
  c.tile_energy_pJ *= s;
  c.accumulate_energy_fJ *= s;
  c.buffer_energy_fJ *= s;
  c.dcim_cell_energy_fJ *= s;
  c.dcim_pass_energy_pJ *= s;
  c.flash_delay_ns *= d;
  c.sar_delay_ns *= d;
  c.bitline_delay_ns_per_row *= d;
  c.wordline_delay_ns_per_col *= d;
  c.accumulate_delay_ns *= d;
  c.dcim_cycle_ns *= d;
  c.dcim_tree_delay_ns *= d;
  c.technode_nm = nm;
  return c;
}

const DeviceCoeffs& SurrogateConfig::device(const std::string& name) const {
  if (name == "SRAM") return sram;
  if (name == "RRAM") return rram;
  if (name == "FeFET") return fefet;
  throw Error(ErrorKind::validity, "unknown memory device '" + name + "'");
}

// ---------------------------------------------------------------------------

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

double ceil_log2(std::int64_t n) {
  double levels = 0;
  std::int64_t cap = 1;
  while (cap < n) {
    cap <<= 1;
    levels += 1;
  }
  return levels;
}

std::int64_t positive(const DesignPoint& p, const char* name) {
  const auto v = p.integer(name);
  if (v < 1) throw Error(ErrorKind::validity, std::string(name) + " must be positive");
  return v;
}

double noise_factor(const SurrogateConfig& cfg, const DesignPoint& point, const std::string& workload, int channel) {
  const std::size_t h = std::hash<std::string>{}(workload + '|' + point.key() + '|' + std::to_string(channel));
  std::mt19937_64 rng(cfg.seed ^ static_cast<std::uint64_t>(h));
  std::normal_distribution<double> z(0.0, cfg.noise_sigma);
  return std::exp(z(rng));
}

}  // namespace

PpaRecord simulate(const DesignPoint& point, const Workload& workload, const SurrogateConfig& cfg) {
  const auto& dev = cfg.device(point.text("memCellType"));
  const std::int64_t rows = positive(point, "rowACIM");
  const std::int64_t cols = positive(point, "colACIM");
  const std::int64_t bits = point.integer("levelADC");
  const std::int64_t mux = positive(point, "muxColADC");
  const std::string& adc = point.text("typeADC");
  if (adc != "Flash" && adc != "SAR") throw Error(ErrorKind::validity, "unknown ADC type '" + adc + "'");
  if (bits < 1 || bits > 16) throw Error(ErrorKind::validity, "ADC precision out of range");
  const std::int64_t parallel_rows = std::int64_t{1} << bits;
  if (rows < parallel_rows) {
    throw Error(ErrorKind::validity, "rowACIM smaller than parallel read (row_ge_parallel_read)");
  }
  if (cols % mux != 0) throw Error(ErrorKind::validity, "colACIM must be a multiple of muxColADC");
  const bool dup = point.has("weightDup") && point.integer("weightDup") != 0;

  const bool flash = adc == "Flash";
  const double adc_area = flash ? cfg.flash_area_um2 * static_cast<double>(parallel_rows)
                                : cfg.sar_area_um2 * static_cast<double>(bits);
  const double adc_energy = flash ? cfg.flash_energy_fJ * static_cast<double>(parallel_rows)
                                  : cfg.sar_energy_fJ * static_cast<double>(bits);
  const double adc_delay = flash ? cfg.flash_delay_ns : cfg.sar_delay_ns * static_cast<double>(bits);
  // Converter front ends are sized to the bitline load, so their share per
  // cell is independent of the row count.
  const double unit_area = dev.cell_area_um2 + cfg.wordline_area_um2 + cfg.column_area_um2 +
                           adc_area / (static_cast<double>(mux) * cfg.adc_reference_rows);
  const double cycle_ns = dev.read_delay_ns + cfg.bitline_delay_ns_per_row * static_cast<double>(rows) +
                          cfg.wordline_delay_ns_per_col * static_cast<double>(cols) + adc_delay;
  const std::int64_t row_groups = ceil_div(rows, parallel_rows);
  const double ib = static_cast<double>(cfg.input_bits);

  double acim_area_um2 = 0;
  double energy_fJ = 0;
  double max_stage_ns = 0;
  double bubble_ns = 0;
  double dcim_area_um2 = 0;

  std::int64_t dcim_rows = 0;
  std::int64_t dcim_cols = 0;
  if (workload.uses_dcim) {
    dcim_rows = positive(point, "rowDCIM");
    dcim_cols = positive(point, "colDCIM");
    const double levels = std::max(1.0, ceil_log2(dcim_rows));
    dcim_area_um2 = cfg.dcim_macros * (static_cast<double>(dcim_rows * dcim_cols) * cfg.dcim_cell_area_um2 +
                                       static_cast<double>(dcim_cols) * levels * cfg.dcim_tree_area_um2);
  }

  for (const auto& l : workload.layers) {
    const double act = static_cast<double>(l.activations);
    double stage_ns = 0;
    double copies = 1;
    if (l.kind == LayerKind::attention) {
      const double passes = static_cast<double>(ceil_div(l.weight_rows, dcim_rows) *
                                                ceil_div(cfg.weight_bits * l.weight_cols, dcim_cols));
      const double cycles = std::ceil(act * ib * passes / cfg.dcim_macros);
      stage_ns = cycles * (cfg.dcim_cycle_ns + cfg.dcim_tree_delay_ns * ceil_log2(dcim_rows));
      const double cells = static_cast<double>(dcim_rows * dcim_cols);
      energy_fJ += act * ib * passes * cells * cfg.dcim_cell_energy_fJ + act * passes * cfg.dcim_pass_energy_pJ * 1e3;
    } else {
      const std::int64_t row_tiles = ceil_div(l.weight_rows, rows);
      const std::int64_t col_tiles = ceil_div(cfg.weight_bits * l.weight_cols, cols);
      const double padded_cells = static_cast<double>(row_tiles * rows) * static_cast<double>(col_tiles * cols);
      copies = (dup && l.kind == LayerKind::conv) ? cfg.duplication_factor : 1.0;
      acim_area_um2 += padded_cells * copies * unit_area + static_cast<double>(l.weight_cols) * cfg.accumulate_area_um2;

      const double tiles = static_cast<double>(row_tiles * col_tiles);
      const double conversions = act * ib * tiles * static_cast<double>(row_groups * cols);
      energy_fJ += act * ib * padded_cells * dev.read_energy_fJ;
      energy_fJ += conversions * adc_energy;
      energy_fJ += act * ib * tiles * cfg.tile_energy_pJ * 1e3;
      energy_fJ += act * static_cast<double>(l.weight_cols * row_tiles) * cfg.accumulate_energy_fJ;
      energy_fJ += act * static_cast<double>(l.weight_rows + l.weight_cols) * cfg.buffer_energy_fJ;

      stage_ns = act * ib * static_cast<double>(row_groups * mux) * cycle_ns +
                 act * ceil_log2(row_tiles) * cfg.accumulate_delay_ns;
    }
    max_stage_ns = std::max(max_stage_ns, stage_ns);
    bubble_ns += stage_ns / copies;
  }

  double area_mm2 = (acim_area_um2 + dcim_area_um2) * 1e-6 + cfg.global_area_mm2;
  double latency_ms = (max_stage_ns + cfg.bubble_factor * bubble_ns) * 1e-6;
  // mW * ms = uJ; leakage only on the ACIM arrays.
  energy_fJ += dev.leakage_mW_per_mm2 * acim_area_um2 * 1e-6 * latency_ms * 1e9;
  double energy_pJ = energy_fJ * 1e-3;

  if (cfg.noise) {
    area_mm2 *= noise_factor(cfg, point, workload.name, 0);
    energy_pJ *= noise_factor(cfg, point, workload.name, 1);
    latency_ms *= noise_factor(cfg, point, workload.name, 2);
  }
  return make_record(area_mm2, energy_pJ, latency_ms, workload.total_ops());
}

std::vector<PpaRecord> batch_simulate(std::span<const DesignPoint> points, const Workload& workload,
                                      const SurrogateConfig& cfg, std::size_t parallelism) {
  if (parallelism < 1) throw Error(ErrorKind::config, "parallelism must be >= 1");
  std::vector<PpaRecord> out(points.size());
  if (points.empty()) return out;
  const std::size_t workers = std::min(parallelism, points.size());

  std::mutex mu;
  std::size_t first_bad = points.size();
  std::exception_ptr first_error;
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < points.size(); i += workers) {
      try {
        out[i] = simulate(points[i], workload, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < first_bad) {
          first_bad = i;
          first_error = std::current_exception();
        }
        return;
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      throw Error(e.kind(), "batch element " + std::to_string(first_bad) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cimdse

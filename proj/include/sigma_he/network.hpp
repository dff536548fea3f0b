#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sigma_he {

enum class BusType { PQ, PV, Swing };

std::string_view to_string(BusType type);

/// Input could not be read as a case file. Carries the 1-based position of the
/// offending token when it is known (0 otherwise).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t line_;
  std::size_t column_;
};

/// Case parsed but violates a structural rule (swing count, dangling ids, ...).
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// All quantities are per-unit on the case base; angles in radians.
struct Bus {
  int id = 0;
  BusType type = BusType::PQ;
  double p_load = 0.0;
  double q_load = 0.0;
  double g_shunt = 0.0;
  double b_shunt = 0.0;
  double v_sp = 1.0;
  double v_angle_sp = 0.0;

  bool operator==(const Bus&) const = default;
};

/// Reactive limits may be infinite (unbounded).
struct Generator {
  int bus = 0;
  double p_gen = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  bool in_service = true;

  bool operator==(const Generator&) const = default;
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;
  double shift = 0.0;
  bool in_service = true;

  bool operator==(const Branch&) const = default;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> generators;
  std::vector<Branch> branches;

  bool operator==(const NetworkCase&) const = default;

  /// Position of a bus id in `buses`; throws std::out_of_range if absent.
  std::size_t bus_position(int id) const;
  std::size_t swing_position() const;
  const Bus& bus(int id) const { return buses[bus_position(id)]; }

  std::size_t count(BusType type) const;

  /// Aggregated in-service generation at a bus (sums over units).
  double generated_p(int bus_id) const;
  double q_min(int bus_id) const;
  double q_max(int bus_id) const;
};

enum class CaseFormat { Matpower, Json };

/// Parses and validates. Non-fatal oddities (unknown columns, skipped fields)
/// are appended to `warnings` when it is non-null.
NetworkCase parse_case(std::string_view text, CaseFormat format,
                       std::vector<std::string>* warnings = nullptr);

/// Reads a file; the format follows the extension (.m -> MATPOWER, .json -> JSON).
NetworkCase load_case(const std::filesystem::path& path,
                      std::vector<std::string>* warnings = nullptr);

/// Native JSON encoding, readable back by parse_case(..., CaseFormat::Json).
std::string to_json(const NetworkCase& network);

/// Throws ValidationError on the first violated rule.
void validate(const NetworkCase& network);

}  // namespace sigma_he

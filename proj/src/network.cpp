#include "sigma_he/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sigma_he {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string position_prefix(std::size_t line, std::size_t column) {
  if (line == 0) {
    return {};
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": ";
}

// ---------------------------------------------------------------------------
// MATPOWER subset reader.
//
// Accepted statements (one per line or ';'-separated):
//   function mpc = <name>
//   mpc.<field> = <number> | '<string>' | [ matrix ] | { cell } ;
//   baseMVA = <number>;            (legacy v1 layout)
// Matrices use whitespace or ',' between entries and ';' or newlines between
// rows. Only baseMVA, bus, gen and branch are interpreted.
// ---------------------------------------------------------------------------

using Matrix = std::vector<std::vector<double>>;

class MatpowerReader {
public:
  MatpowerReader(std::string_view text, std::vector<std::string>* warnings)
      : text_(text), warnings_(warnings) {}

  struct Result {
    std::string name;
    std::optional<double> base_mva;
    std::optional<Matrix> bus;
    std::optional<Matrix> gen;
    std::optional<Matrix> branch;
  };

  Result read() {
    Result result;
    while (true) {
      skip_blank(true);
      if (at_end()) {
        break;
      }
      const std::size_t stmt_line = line_;
      const std::size_t stmt_col = col_;
      std::string ident = read_identifier();
      if (ident.empty()) {
        fail("expected a statement");
      }
      if (ident == "function") {
        // function mpc = name
        skip_blank(false);
        read_identifier();
        skip_blank(false);
        expect('=');
        skip_blank(false);
        result.name = read_identifier();
        finish_statement();
        continue;
      }
      skip_blank(false);
      expect('=');
      skip_blank(false);

      std::string field = ident;
      if (field.rfind("mpc.", 0) == 0) {
        field = field.substr(4);
      }

      if (peek() == '[') {
        Matrix m = read_matrix();
        if (field == "bus") {
          result.bus = std::move(m);
        } else if (field == "gen") {
          result.gen = std::move(m);
        } else if (field == "branch") {
          result.branch = std::move(m);
        } else {
          warn("ignoring field '" + ident + "' (" + position_prefix(stmt_line, stmt_col) + "not used)");
        }
      } else if (peek() == '{') {
        skip_cell();
        warn("ignoring cell field '" + ident + "'");
      } else if (peek() == '\'' || peek() == '"') {
        read_string();
        if (field != "version") {
          warn("ignoring string field '" + ident + "'");
        }
      } else {
        const double value = read_number();
        if (field == "baseMVA") {
          result.base_mva = value;
        } else {
          warn("ignoring scalar field '" + ident + "'");
        }
      }
      finish_statement();
    }
    return result;
  }

private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError(position_prefix(line_, col_) + message, line_, col_);
  }

  void warn(const std::string& message) {
    if (warnings_ != nullptr) {
      warnings_->push_back(message);
    }
  }

  void skip_comment() {
    while (!at_end() && peek() != '\n') {
      advance();
    }
  }

  // Skips spaces, tabs, comments, '...' continuations; newlines only if asked.
  void skip_blank(bool newlines) {
    while (!at_end()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
      } else if (c == '%' || c == '#') {
        skip_comment();
      } else if (c == '.' && text_.substr(pos_, 3) == "...") {
        skip_comment();
        if (!at_end()) {
          advance();
        }
      } else if (newlines && (c == '\n' || c == ';')) {
        advance();
      } else {
        break;
      }
    }
  }

  void expect(char c) {
    if (peek() != c) {
      fail(std::string("expected '") + c + "'");
    }
    advance();
  }

  void finish_statement() {
    skip_blank(false);
    if (at_end()) {
      return;
    }
    if (peek() == ';' || peek() == '\n' || peek() == ',') {
      advance();
      return;
    }
    fail(std::string("unexpected character '") + peek() + "'");
  }

  std::string read_identifier() {
    std::string out;
    while (!at_end()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
          (c == '.' && !out.empty() && text_.substr(pos_, 3) != "...")) {
        out.push_back(c);
        advance();
      } else {
        break;
      }
    }
    return out;
  }

  void read_string() {
    const char quote = peek();
    advance();
    while (!at_end() && peek() != quote) {
      if (peek() == '\n') {
        fail("unterminated string");
      }
      advance();
    }
    if (at_end()) {
      fail("unterminated string");
    }
    advance();
  }

  void skip_cell() {
    int depth = 0;
    do {
      if (at_end()) {
        fail("unterminated cell array");
      }
      const char c = peek();
      if (c == '{') {
        ++depth;
      } else if (c == '}') {
        --depth;
      } else if (c == '\'' || c == '"') {
        read_string();
        continue;
      } else if (c == '%') {
        skip_comment();
        continue;
      }
      advance();
    } while (depth > 0);
  }

  double read_number() {
    const std::size_t start = pos_;
    const std::size_t line = line_;
    const std::size_t col = col_;
    bool negative = false;
    if (peek() == '+' || peek() == '-') {
      negative = peek() == '-';
      advance();
    }
    if (std::isalpha(static_cast<unsigned char>(peek()))) {
      std::string word = read_identifier();
      if (word == "Inf" || word == "inf") {
        return negative ? -kInf : kInf;
      }
      if (word == "NaN" || word == "nan") {
        throw ParseError(position_prefix(line, col) + "NaN is not a valid case value", line, col);
      }
      throw ParseError(position_prefix(line, col) + "expected a number, found '" + word + "'", line,
                       col);
    }
    while (!at_end()) {
      const char c = peek();
      const bool exp_sign = (c == '+' || c == '-') && pos_ > start &&
                            (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E');
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == 'e' || c == 'E' ||
          exp_sign) {
        advance();
      } else {
        break;
      }
    }
    const std::string token(text_.substr(start, pos_ - start));
    char* end = nullptr;
    const double value = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size()) {
      throw ParseError(position_prefix(line, col) + "malformed number '" + token + "'", line, col);
    }
    return value;
  }

  Matrix read_matrix() {
    const std::size_t open_line = line_;
    const std::size_t open_col = col_;
    expect('[');
    Matrix rows;
    std::vector<double> row;
    auto flush = [&] {
      if (!row.empty()) {
        rows.push_back(std::move(row));
        row.clear();
      }
    };
    while (true) {
      skip_blank(false);
      if (at_end()) {
        throw ParseError(position_prefix(open_line, open_col) + "unterminated matrix", open_line,
                         open_col);
      }
      const char c = peek();
      if (c == ']') {
        advance();
        flush();
        break;
      }
      if (c == ';' || c == '\n') {
        advance();
        flush();
        continue;
      }
      if (c == ',') {
        advance();
        continue;
      }
      row.push_back(read_number());
    }
    return rows;
  }

  std::string_view text_;
  std::vector<std::string>* warnings_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

void check_columns(const Matrix& m, std::size_t required, std::size_t canonical,
                   const std::string& field, std::vector<std::string>* warnings) {
  bool warned = false;
  for (std::size_t r = 0; r < m.size(); ++r) {
    if (m[r].size() < required) {
      throw ParseError("mpc." + field + " row " + std::to_string(r + 1) + " has " +
                       std::to_string(m[r].size()) + " columns, expected at least " +
                       std::to_string(required));
    }
    if (m[r].size() > canonical && !warned && warnings != nullptr) {
      warnings->push_back("mpc." + field + ": ignoring " + std::to_string(m[r].size() - canonical) +
                          " column(s) beyond the canonical " + std::to_string(canonical));
      warned = true;
    }
  }
}

int as_id(double v, const std::string& what) {
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw ParseError(what + " must be an integer, got " + std::to_string(v));
  }
  return static_cast<int>(v);
}

NetworkCase from_matpower(std::string_view text, std::vector<std::string>* warnings) {
  MatpowerReader reader(text, warnings);
  auto raw = reader.read();
  if (!raw.base_mva) {
    throw ParseError("missing baseMVA");
  }
  if (!raw.bus || !raw.gen || !raw.branch) {
    throw ParseError("case must define bus, gen and branch matrices");
  }
  check_columns(*raw.bus, 9, 13, "bus", warnings);
  check_columns(*raw.gen, 8, 21, "gen", warnings);
  check_columns(*raw.branch, 11, 13, "branch", warnings);

  NetworkCase net;
  net.name = raw.name;
  net.base_mva = *raw.base_mva;
  if (!(net.base_mva > 0.0)) {
    throw ValidationError("baseMVA must be positive");
  }
  const double base = net.base_mva;

  for (const auto& row : *raw.bus) {
    Bus bus;
    bus.id = as_id(row[0], "bus id");
    const int type = as_id(row[1], "bus type");
    switch (type) {
      case 1: bus.type = BusType::PQ; break;
      case 2: bus.type = BusType::PV; break;
      case 3: bus.type = BusType::Swing; break;
      default:
        throw ValidationError("bus " + std::to_string(bus.id) + " has unsupported type " +
                              std::to_string(type));
    }
    bus.p_load = row[2] / base;
    bus.q_load = row[3] / base;
    bus.g_shunt = row[4] / base;
    bus.b_shunt = row[5] / base;
    bus.v_sp = row[7];
    bus.v_angle_sp = bus.type == BusType::Swing ? row[8] * kDegToRad : 0.0;
    net.buses.push_back(bus);
  }

  std::set<int> vg_taken;
  for (const auto& row : *raw.gen) {
    Generator gen;
    gen.bus = as_id(row[0], "generator bus");
    gen.p_gen = row[1] / base;
    gen.q_max = row[3] / base;
    gen.q_min = row[4] / base;
    gen.in_service = row[7] > 0.0;
    net.generators.push_back(gen);
    // Regulated magnitude comes from the first in-service unit at the bus.
    if (gen.in_service) {
      for (auto& bus : net.buses) {
        if (bus.id == gen.bus && bus.type != BusType::PQ) {
          if (vg_taken.insert(bus.id).second) {
            bus.v_sp = row[5];
          } else if (row[5] != bus.v_sp && warnings != nullptr) {
            warnings->push_back("bus " + std::to_string(bus.id) +
                                ": conflicting generator set-points, keeping the first");
          }
        }
      }
    }
  }

  for (const auto& row : *raw.branch) {
    Branch br;
    br.from = as_id(row[0], "branch from-bus");
    br.to = as_id(row[1], "branch to-bus");
    br.r = row[2];
    br.x = row[3];
    br.b_charging = row[4];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift = row[9] * kDegToRad;
    br.in_service = row[10] > 0.0;
    net.branches.push_back(br);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Native JSON (per-unit values, infinite limits as null).
// ---------------------------------------------------------------------------

using nlohmann::json;

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

BusType bus_type_from(const std::string& s) {
  if (s == "PQ") return BusType::PQ;
  if (s == "PV") return BusType::PV;
  if (s == "SWING") return BusType::Swing;
  throw ParseError("unknown bus type '" + s + "'");
}

double number_or_inf(const json& j, const char* key, double if_null, double if_missing) {
  auto it = j.find(key);
  if (it == j.end()) {
    return if_missing;
  }
  if (it->is_null()) {
    return if_null;
  }
  if (!it->is_number()) {
    throw ParseError(std::string("field '") + key + "' must be a number");
  }
  return it->get<double>();
}

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

void warn_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where,
                  std::vector<std::string>* warnings) {
  if (warnings == nullptr) {
    return;
  }
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      warnings->push_back(where + ": ignoring unknown field '" + key + "'");
    }
  }
}

NetworkCase from_json(std::string_view text, std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(position_prefix(line, col) + "JSON syntax error", line, col);
  }
  if (!doc.is_object()) {
    throw ParseError("case document must be a JSON object");
  }
  warn_unknown(doc, {"name", "base_mva", "buses", "generators", "branches", "$schema"}, "case",
               warnings);

  NetworkCase net;
  net.name = doc.value("name", std::string{});
  net.base_mva = required<double>(doc, "base_mva", "case");

  const auto& buses = doc.at("buses");
  for (std::size_t k = 0; k < buses.size(); ++k) {
    const auto& b = buses[k];
    const std::string where = "buses[" + std::to_string(k) + "]";
    warn_unknown(b, {"id", "type", "p_load", "q_load", "g_shunt", "b_shunt", "v_sp", "v_angle_sp"},
                 where, warnings);
    Bus bus;
    bus.id = required<int>(b, "id", where);
    bus.type = bus_type_from(required<std::string>(b, "type", where));
    bus.p_load = b.value("p_load", 0.0);
    bus.q_load = b.value("q_load", 0.0);
    bus.g_shunt = b.value("g_shunt", 0.0);
    bus.b_shunt = b.value("b_shunt", 0.0);
    bus.v_sp = b.value("v_sp", 1.0);
    bus.v_angle_sp = b.value("v_angle_sp", 0.0);
    net.buses.push_back(bus);
  }

  if (doc.contains("generators")) {
    const auto& gens = doc.at("generators");
    for (std::size_t k = 0; k < gens.size(); ++k) {
      const auto& g = gens[k];
      const std::string where = "generators[" + std::to_string(k) + "]";
      warn_unknown(g, {"bus", "p_gen", "q_min", "q_max", "in_service"}, where, warnings);
      Generator gen;
      gen.bus = required<int>(g, "bus", where);
      gen.p_gen = g.value("p_gen", 0.0);
      gen.q_min = number_or_inf(g, "q_min", -kInf, -kInf);
      gen.q_max = number_or_inf(g, "q_max", kInf, kInf);
      gen.in_service = g.value("in_service", true);
      net.generators.push_back(gen);
    }
  }

  const auto& branches = doc.at("branches");
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const auto& b = branches[k];
    const std::string where = "branches[" + std::to_string(k) + "]";
    warn_unknown(b, {"from", "to", "r", "x", "b_charging", "tap", "shift", "in_service"}, where,
                 warnings);
    Branch br;
    br.from = required<int>(b, "from", where);
    br.to = required<int>(b, "to", where);
    br.r = b.value("r", 0.0);
    br.x = b.value("x", 0.0);
    br.b_charging = b.value("b_charging", 0.0);
    br.tap = b.value("tap", 1.0);
    br.shift = b.value("shift", 0.0);
    br.in_service = b.value("in_service", true);
    net.branches.push_back(br);
  }
  return net;
}

nlohmann::ordered_json limit_to_json(double v) {
  return std::isinf(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(what), line_(line), column_(column) {}

std::string_view to_string(BusType type) {
  switch (type) {
    case BusType::PQ: return "PQ";
    case BusType::PV: return "PV";
    case BusType::Swing: return "SWING";
  }
  return "?";
}

std::size_t NetworkCase::bus_position(int id) const {
  for (std::size_t k = 0; k < buses.size(); ++k) {
    if (buses[k].id == id) {
      return k;
    }
  }
  throw std::out_of_range("unknown bus id " + std::to_string(id));
}

std::size_t NetworkCase::swing_position() const {
  for (std::size_t k = 0; k < buses.size(); ++k) {
    if (buses[k].type == BusType::Swing) {
      return k;
    }
  }
  throw ValidationError("missing swing bus");
}

std::size_t NetworkCase::count(BusType type) const {
  return static_cast<std::size_t>(
      std::count_if(buses.begin(), buses.end(), [&](const Bus& b) { return b.type == type; }));
}

double NetworkCase::generated_p(int bus_id) const {
  double p = 0.0;
  for (const auto& g : generators) {
    if (g.in_service && g.bus == bus_id) {
      p += g.p_gen;
    }
  }
  return p;
}

double NetworkCase::q_min(int bus_id) const {
  double q = 0.0;
  bool any = false;
  for (const auto& g : generators) {
    if (g.in_service && g.bus == bus_id) {
      q += g.q_min;
      any = true;
    }
  }
  return any ? q : -kInf;
}

double NetworkCase::q_max(int bus_id) const {
  double q = 0.0;
  bool any = false;
  for (const auto& g : generators) {
    if (g.in_service && g.bus == bus_id) {
      q += g.q_max;
      any = true;
    }
  }
  return any ? q : kInf;
}

void validate(const NetworkCase& net) {
  if (!(net.base_mva > 0.0)) {
    throw ValidationError("base_mva must be positive");
  }
  if (net.buses.empty()) {
    throw ValidationError("case has no buses");
  }
  std::set<int> ids;
  for (const auto& b : net.buses) {
    if (!ids.insert(b.id).second) {
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    }
  }
  const auto swings = net.count(BusType::Swing);
  if (swings == 0) {
    throw ValidationError("missing swing bus");
  }
  if (swings > 1) {
    throw ValidationError("multiple swing buses");
  }
  for (const auto& b : net.buses) {
    if (b.type != BusType::PQ && !(b.v_sp > 0.0)) {
      throw ValidationError("non-positive v_sp at bus " + std::to_string(b.id));
    }
  }
  for (std::size_t k = 0; k < net.generators.size(); ++k) {
    const auto& g = net.generators[k];
    if (!ids.contains(g.bus)) {
      throw ValidationError("generator " + std::to_string(k + 1) + " references unknown bus " +
                            std::to_string(g.bus));
    }
    if (g.q_min > g.q_max) {
      throw ValidationError("generator " + std::to_string(k + 1) + " has q_min > q_max");
    }
    if (g.in_service && net.bus(g.bus).type == BusType::PQ) {
      throw ValidationError("generator " + std::to_string(k + 1) + " sits on PQ bus " +
                            std::to_string(g.bus));
    }
  }
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const auto& br = net.branches[k];
    for (int end : {br.from, br.to}) {
      if (!ids.contains(end)) {
        throw ValidationError("branch " + std::to_string(k + 1) + " references unknown bus " +
                              std::to_string(end));
      }
    }
    if (br.from == br.to) {
      throw ValidationError("branch " + std::to_string(k + 1) + " is a self-loop");
    }
    if (br.in_service && br.r * br.r + br.x * br.x <= 0.0) {
      throw ValidationError("branch " + std::to_string(k + 1) + " has zero impedance");
    }
    if (!(br.tap > 0.0)) {
      throw ValidationError("branch " + std::to_string(k + 1) + " has non-positive tap ratio");
    }
  }
}

NetworkCase parse_case(std::string_view text, CaseFormat format, std::vector<std::string>* warnings) {
  NetworkCase net;
  if (format == CaseFormat::Matpower) {
    net = from_matpower(text, warnings);
  } else {
    try {
      net = from_json(text, warnings);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed case document: ") + e.what());
    }
  }
  validate(net);
  return net;
}

NetworkCase load_case(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open case file '" + path.string() + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const auto ext = path.extension().string();
  const CaseFormat format = ext == ".json" ? CaseFormat::Json : CaseFormat::Matpower;
  NetworkCase net = parse_case(buffer.str(), format, warnings);
  if (net.name.empty()) {
    net.name = path.stem().string();
  }
  return net;
}

std::string to_json(const NetworkCase& net) {
  using ojson = nlohmann::ordered_json;
  ojson doc;
  doc["name"] = net.name;
  doc["base_mva"] = net.base_mva;
  doc["buses"] = ojson::array();
  for (const auto& b : net.buses) {
    doc["buses"].push_back({{"id", b.id},
                            {"type", std::string(to_string(b.type))},
                            {"p_load", b.p_load},
                            {"q_load", b.q_load},
                            {"g_shunt", b.g_shunt},
                            {"b_shunt", b.b_shunt},
                            {"v_sp", b.v_sp},
                            {"v_angle_sp", b.v_angle_sp}});
  }
  doc["generators"] = ojson::array();
  for (const auto& g : net.generators) {
    doc["generators"].push_back({{"bus", g.bus},
                                 {"p_gen", g.p_gen},
                                 {"q_min", limit_to_json(g.q_min)},
                                 {"q_max", limit_to_json(g.q_max)},
                                 {"in_service", g.in_service}});
  }
  doc["branches"] = ojson::array();
  for (const auto& br : net.branches) {
    doc["branches"].push_back({{"from", br.from},
                               {"to", br.to},
                               {"r", br.r},
                               {"x", br.x},
                               {"b_charging", br.b_charging},
                               {"tap", br.tap},
                               {"shift", br.shift},
                               {"in_service", br.in_service}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace sigma_he

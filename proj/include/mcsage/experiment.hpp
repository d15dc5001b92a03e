#pragma once

// Experiment configuration (plain-text key=value files with strict
// validation) and result emission: CSV with the fixed header
// receiver,axis,user,metric,value,bound,trials,seed plus a JSON mirror.
// Identical spec + seed must reproduce output files byte for byte, so all
// numbers are printed with shortest round-trip formatting.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsage/config.hpp"

namespace mcsage {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

enum class SweepAxis { tau_max_fraction, effective_snr_db };
enum class ReceiverKind { mcmc_sage, sage_known_tau, mmse_se, single_user };
enum class InitKind { mmse_se, truth };

inline std::string to_string(ReceiverKind r) {
    switch (r) {
        case ReceiverKind::mcmc_sage: return "mcmc_sage";
        case ReceiverKind::sage_known_tau: return "sage_known_tau";
        case ReceiverKind::mmse_se: return "mmse_se";
        case ReceiverKind::single_user: return "single_user";
    }
    return "?";
}

struct ExperimentSpec {
    SystemConfig base;
    SweepAxis axis = SweepAxis::tau_max_fraction;
    std::vector<double> axis_values;
    int trials = 200;
    std::vector<ReceiverKind> receivers;
    std::string output_path = "results.csv";
    int nominal_user = 0;     // 0-based; default K/2 (the median-power user)
    InitKind init = InitKind::mmse_se;
    double tau_max_fraction = 0.5;  // delay spread for the BER sweep

    void validate() const {
        base.validate();
        if (axis_values.empty()) throw std::invalid_argument("ExperimentSpec: axis_values must be nonempty");
        for (std::size_t i = 1; i < axis_values.size(); ++i)
            if (!(axis_values[i] > axis_values[i - 1]))
                throw std::invalid_argument("ExperimentSpec: axis_values must be strictly increasing");
        if (trials < 1) throw std::invalid_argument("ExperimentSpec: trials must be >= 1");
        if (receivers.empty()) throw std::invalid_argument("ExperimentSpec: receivers must be nonempty");
        if (nominal_user < 0 || nominal_user >= base.K)
            throw std::invalid_argument("ExperimentSpec: nominal_user out of range");
        if (!(tau_max_fraction > 0.0) || tau_max_fraction > 0.5)
            throw std::invalid_argument("ExperimentSpec: tau_max_fraction must be in (0, 0.5]");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
}

struct SpecParser {
    std::string source;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error(source + ":" + std::to_string(line) + ": " + msg);
    }

    long long parse_int(const std::string& v) const {
        long long x = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) fail("expected an integer, got '" + v + "'");
        return x;
    }

    std::uint64_t parse_u64(const std::string& v) const {
        std::uint64_t x = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size())
            fail("expected an unsigned integer, got '" + v + "'");
        return x;
    }

    double parse_real(const std::string& v) const {
        double x = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) fail("expected a number, got '" + v + "'");
        return x;
    }

    std::vector<double> parse_real_list(const std::string& v) const {
        std::vector<double> out;
        for (const auto& item : split_csv(v)) {
            if (item.empty()) fail("empty entry in list '" + v + "'");
            out.push_back(parse_real(item));
        }
        if (out.empty()) fail("expected a nonempty list");
        return out;
    }
};

}  // namespace detail

inline ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_spec: cannot open '" + path + "'");
    detail::SpecParser p;
    p.source = path;

    ExperimentSpec spec;
    spec.base.sigma2.clear();
    std::vector<std::string> seen;
    bool have_sigma2 = false, have_sigma2_db = false, have_axis = false, have_axis_values = false,
         have_trials = false, have_receivers = false, have_nominal = false;
    std::vector<double> sigma_raw;

    std::string raw;
    while (std::getline(in, raw)) {
        ++p.line;
        std::string lineText = raw;
        const std::size_t hash = lineText.find('#');
        if (hash != std::string::npos) lineText.erase(hash);
        lineText = detail::trim(lineText);
        if (lineText.empty()) continue;
        const std::size_t eq = lineText.find('=');
        if (eq == std::string::npos) p.fail("expected 'key = value'");
        const std::string key = detail::trim(lineText.substr(0, eq));
        const std::string val = detail::trim(lineText.substr(eq + 1));
        if (key.empty()) p.fail("missing key");
        if (val.empty()) p.fail("missing value for key '" + key + "'");
        for (const auto& s : seen)
            if (s == key) p.fail("duplicate key '" + key + "'");
        seen.push_back(key);

        if (key == "K") spec.base.K = (int)p.parse_int(val);
        else if (key == "Nc") spec.base.Nc = (int)p.parse_int(val);
        else if (key == "Q") spec.base.Q = (int)p.parse_int(val);
        else if (key == "L") spec.base.L = (int)p.parse_int(val);
        else if (key == "Lp") spec.base.Lp = (int)p.parse_int(val);
        else if (key == "N0") spec.base.N0 = p.parse_real(val);
        else if (key == "sigma2") { sigma_raw = p.parse_real_list(val); have_sigma2 = true; }
        else if (key == "sigma2_db") { sigma_raw = p.parse_real_list(val); have_sigma2_db = true; }
        else if (key == "Nt") spec.base.Nt = (int)p.parse_int(val);
        else if (key == "burn_in") spec.base.burn_in = (int)p.parse_int(val);
        else if (key == "sage_iters") spec.base.sage_iters = (int)p.parse_int(val);
        else if (key == "seed") spec.base.seed = p.parse_u64(val);
        else if (key == "axis") {
            if (val == "tau_max_fraction") spec.axis = SweepAxis::tau_max_fraction;
            else if (val == "effective_snr_db") spec.axis = SweepAxis::effective_snr_db;
            else p.fail("axis must be 'tau_max_fraction' or 'effective_snr_db', got '" + val + "'");
            have_axis = true;
        } else if (key == "axis_values") {
            spec.axis_values = p.parse_real_list(val);
            have_axis_values = true;
        } else if (key == "trials") {
            spec.trials = (int)p.parse_int(val);
            have_trials = true;
        } else if (key == "receivers") {
            spec.receivers.clear();
            for (const auto& name : detail::split_csv(val)) {
                if (name == "mcmc_sage") spec.receivers.push_back(ReceiverKind::mcmc_sage);
                else if (name == "sage_known_tau") spec.receivers.push_back(ReceiverKind::sage_known_tau);
                else if (name == "mmse_se") spec.receivers.push_back(ReceiverKind::mmse_se);
                else if (name == "single_user") spec.receivers.push_back(ReceiverKind::single_user);
                else p.fail("unknown receiver '" + name + "'");
            }
            have_receivers = true;
        } else if (key == "out") {
            spec.output_path = val;
        } else if (key == "nominal_user") {
            spec.nominal_user = (int)p.parse_int(val) - 1;  // file uses 1-based user labels
            have_nominal = true;
        } else if (key == "init") {
            if (val == "mmse_se") spec.init = InitKind::mmse_se;
            else if (val == "truth") spec.init = InitKind::truth;
            else p.fail("init must be 'mmse_se' or 'truth', got '" + val + "'");
        } else if (key == "tau_max_fraction") {
            spec.tau_max_fraction = p.parse_real(val);
        } else {
            p.fail("unknown key '" + key + "'");
        }
    }

    p.line = 0;
    auto require = [&p](bool ok, const std::string& what) {
        if (!ok) p.fail("missing required key '" + what + "'");
    };
    require(have_axis, "axis");
    require(have_axis_values, "axis_values");
    require(have_trials, "trials");
    require(have_receivers, "receivers");
    if (have_sigma2 == have_sigma2_db)
        p.fail("exactly one of 'sigma2' or 'sigma2_db' is required");
    spec.base.sigma2 = sigma_raw;
    if (have_sigma2_db)
        for (auto& s : spec.base.sigma2) s = std::pow(10.0, s / 10.0);
    if (!have_nominal) spec.nominal_user = spec.base.K / 2;
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return spec;
}

// Canonical serialization (sigma2 in linear units); load(write(spec)) == spec.
inline void write_spec(const ExperimentSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_spec: cannot open '" + path + "'");
    out << "K = " << spec.base.K << "\n";
    out << "Nc = " << spec.base.Nc << "\n";
    out << "Q = " << spec.base.Q << "\n";
    out << "L = " << spec.base.L << "\n";
    out << "Lp = " << spec.base.Lp << "\n";
    out << "N0 = " << format_double(spec.base.N0) << "\n";
    out << "sigma2 = ";
    for (std::size_t i = 0; i < spec.base.sigma2.size(); ++i)
        out << (i ? "," : "") << format_double(spec.base.sigma2[i]);
    out << "\n";
    out << "Nt = " << spec.base.Nt << "\n";
    out << "burn_in = " << spec.base.burn_in << "\n";
    out << "sage_iters = " << spec.base.sage_iters << "\n";
    out << "seed = " << spec.base.seed << "\n";
    out << "axis = " << (spec.axis == SweepAxis::tau_max_fraction ? "tau_max_fraction" : "effective_snr_db")
        << "\n";
    out << "axis_values = ";
    for (std::size_t i = 0; i < spec.axis_values.size(); ++i)
        out << (i ? "," : "") << format_double(spec.axis_values[i]);
    out << "\n";
    out << "trials = " << spec.trials << "\n";
    out << "receivers = ";
    for (std::size_t i = 0; i < spec.receivers.size(); ++i) out << (i ? "," : "") << to_string(spec.receivers[i]);
    out << "\n";
    out << "out = " << spec.output_path << "\n";
    out << "nominal_user = " << (spec.nominal_user + 1) << "\n";
    out << "init = " << (spec.init == InitKind::mmse_se ? "mmse_se" : "truth") << "\n";
    out << "tau_max_fraction = " << format_double(spec.tau_max_fraction) << "\n";
}

struct SweepRow {
    std::string receiver;
    double axis = 0.0;
    int user = 0;  // 1-based in output
    std::string metric;
    double value = 0.0;
    std::optional<double> bound;
    int trials = 0;
    std::uint64_t seed = 0;
};

// Fraction of trials whose parameters settled between rounds 5 and 6
// (mcmc_sage only; counted is 0 when sage_iters gives no sixth round).
struct ConvergenceDiag {
    double axis = 0.0;
    int stable = 0;
    int counted = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<ConvergenceDiag> convergence;
};

inline std::string render_csv(const SweepResult& result) {
    std::string out = "receiver,axis,user,metric,value,bound,trials,seed\n";
    for (const auto& row : result.rows) {
        out += row.receiver;
        out += ',';
        out += format_double(row.axis);
        out += ',';
        out += std::to_string(row.user);
        out += ',';
        out += row.metric;
        out += ',';
        out += format_double(row.value);
        out += ',';
        if (row.bound) out += format_double(*row.bound);
        out += ',';
        out += std::to_string(row.trials);
        out += ',';
        out += std::to_string(row.seed);
        out += '\n';
    }
    return out;
}

inline std::string json_mirror_path(const std::string& csv_path) {
    const std::size_t dot = csv_path.find_last_of('.');
    const std::size_t slash = csv_path.find_last_of("/\\");
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash))
        return csv_path.substr(0, dot) + ".json";
    return csv_path + ".json";
}

inline void write_results(const SweepResult& result, const std::string& csv_path) {
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw std::runtime_error("write_results: cannot open '" + csv_path + "'");
        out << render_csv(result);
    }
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : result.rows) {
        nlohmann::ordered_json j;
        j["receiver"] = row.receiver;
        j["axis"] = row.axis;
        j["user"] = row.user;
        j["metric"] = row.metric;
        j["value"] = row.value;
        if (row.bound) j["bound"] = *row.bound;
        else j["bound"] = nullptr;
        j["trials"] = row.trials;
        j["seed"] = row.seed;
        rows.push_back(std::move(j));
    }
    std::ofstream out(json_mirror_path(csv_path), std::ios::binary);
    if (!out) throw std::runtime_error("write_results: cannot open '" + json_mirror_path(csv_path) + "'");
    out << rows.dump(2) << "\n";
}

}  // namespace mcsage

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "amg/sampler.hpp"

namespace amg {

// Trace CSV: one row per step.
//   seed,step,t,sigma,lambda,activated,s1,s2,gsim_norm,neighbor_id
// sigma is "nan" on steps where no similarity search ran.
//
// Samples CSV: one row per trajectory.
//   seed,failed,sigma,neighbor_id,memorized,x0,...,x{d-1}
//
// Binary trace (".amgt"), little-endian:
//   magic "AMGT", u32 version (=1), u32 trajectory count, then per trajectory:
//   u64 seed, u32 step count, u32 dim, u8 failed, then per step
//   i32 t, f64 sigma, f64 lambda, u8 activated, f64 s1, f64 s2, f64 gsim_norm, i32 neighbor_id,
//   then dim f64 for the final sample and f64 final sigma, i32 final neighbor id.

inline constexpr std::uint32_t kTraceBinaryVersion = 1;

inline void write_step_csv_header(std::ostream& os) { os << "seed,step,t,sigma,lambda,activated,s1,s2,gsim_norm,neighbor_id\n"; }

inline void write_step_csv(std::ostream& os, std::uint64_t seed, std::size_t step, const StepRecord& r) {
    os << seed << ',' << step << ',' << r.t << ',' << r.sigma << ',' << r.lambda << ',' << (r.activated ? 1 : 0) << ','
       << r.s1 << ',' << r.s2 << ',' << r.gsim_norm << ',' << r.neighbor_id << '\n';
}

inline void write_traces_csv(std::ostream& os, const std::vector<SampleTrace>& traces) {
    os << std::setprecision(17);
    write_step_csv_header(os);
    for (const auto& tr : traces)
        for (std::size_t i = 0; i < tr.steps.size(); ++i) write_step_csv(os, tr.seed, i, tr.steps[i]);
}

inline void write_samples_csv(std::ostream& os, const std::vector<SampleTrace>& traces) {
    const int d = traces.empty() ? 0 : int(traces.front().x0.size());
    os << "seed,failed,sigma,neighbor_id,memorized";
    for (int j = 0; j < d; ++j) os << ",x" << j;
    os << '\n' << std::setprecision(17);
    for (const auto& tr : traces) {
        os << tr.seed << ',' << (tr.failed ? 1 : 0) << ',' << tr.final_verdict.sigma << ','
           << tr.final_verdict.neighbor_id << ',' << (tr.final_verdict.memorized ? 1 : 0);
        for (int j = 0; j < tr.x0.size(); ++j) os << ',' << tr.x0[j];
        os << '\n';
    }
}

struct SampleRow {
    std::uint64_t seed = 0;
    bool failed = false;
    double sigma = 0;
    int neighbor_id = -1;
    bool memorized = false;
    Vec x0;
};

inline std::vector<SampleRow> read_samples_csv(std::istream& is) {
    std::vector<SampleRow> rows;
    std::string line;
    if (!std::getline(is, line) || line.rfind("seed,failed,sigma", 0) != 0)
        throw InvalidArgument("samples table: missing header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 5) throw InvalidArgument("samples table: short row");
        SampleRow r;
        try {
            r.seed = std::stoull(cells[0]);
            r.failed = cells[1] == "1";
            r.sigma = std::stod(cells[2]);
            r.neighbor_id = std::stoi(cells[3]);
            r.memorized = cells[4] == "1";
            r.x0.resize(Eigen::Index(cells.size() - 5));
            for (std::size_t j = 5; j < cells.size(); ++j) r.x0[Eigen::Index(j - 5)] = std::stod(cells[j]);
        } catch (const std::logic_error&) {
            throw InvalidArgument("samples table: bad number in row for seed " + cells[0]);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace detail {
template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(buf, sizeof(T));
}
template <class T>
T take(std::istream& is) {
    char buf[sizeof(T)];
    if (!is.read(buf, sizeof(T))) throw InvalidArgument("binary trace: truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
}  // namespace detail

inline void write_traces_binary(std::ostream& os, const std::vector<SampleTrace>& traces) {
    using detail::put;
    os.write("AMGT", 4);
    put<std::uint32_t>(os, kTraceBinaryVersion);
    put<std::uint32_t>(os, std::uint32_t(traces.size()));
    for (const auto& tr : traces) {
        put<std::uint64_t>(os, tr.seed);
        put<std::uint32_t>(os, std::uint32_t(tr.steps.size()));
        put<std::uint32_t>(os, std::uint32_t(tr.x0.size()));
        put<std::uint8_t>(os, tr.failed ? 1 : 0);
        for (const auto& r : tr.steps) {
            put<std::int32_t>(os, r.t);
            put<double>(os, r.sigma);
            put<double>(os, r.lambda);
            put<std::uint8_t>(os, r.activated ? 1 : 0);
            put<double>(os, r.s1);
            put<double>(os, r.s2);
            put<double>(os, r.gsim_norm);
            put<std::int32_t>(os, r.neighbor_id);
        }
        for (Eigen::Index j = 0; j < tr.x0.size(); ++j) put<double>(os, tr.x0[j]);
        put<double>(os, tr.final_verdict.sigma);
        put<std::int32_t>(os, tr.final_verdict.neighbor_id);
    }
}

inline std::vector<SampleTrace> read_traces_binary(std::istream& is) {
    using detail::take;
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "AMGT", 4) != 0) throw InvalidArgument("binary trace: bad magic");
    auto version = take<std::uint32_t>(is);
    if (version != kTraceBinaryVersion) throw InvalidArgument("binary trace: unsupported version " + std::to_string(version));
    std::vector<SampleTrace> out(take<std::uint32_t>(is));
    for (auto& tr : out) {
        tr.seed = take<std::uint64_t>(is);
        auto steps = take<std::uint32_t>(is);
        auto dim = take<std::uint32_t>(is);
        tr.failed = take<std::uint8_t>(is) != 0;
        tr.steps.resize(steps);
        for (auto& r : tr.steps) {
            r.t = take<std::int32_t>(is);
            r.sigma = take<double>(is);
            r.lambda = take<double>(is);
            r.activated = take<std::uint8_t>(is) != 0;
            r.s1 = take<double>(is);
            r.s2 = take<double>(is);
            r.gsim_norm = take<double>(is);
            r.neighbor_id = take<std::int32_t>(is);
        }
        tr.x0.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) tr.x0[j] = take<double>(is);
        tr.final_verdict.sigma = take<double>(is);
        tr.final_verdict.neighbor_id = take<std::int32_t>(is);
    }
    return out;
}

}  // namespace amg

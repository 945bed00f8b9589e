#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amg/schedule.hpp"

namespace amg {

/// Finite training set. Rows are distinct ids; duplication is carried as a weight.
struct TrainingCorpus {
    Mat points;                       // N x d, one row per id
    std::vector<int> tokens;          // per-row condition token
    std::vector<double> multiplicity; // per-row duplication count, >= 1
    std::vector<int> watchlist;       // optional protected ids

    int size() const { return int(points.rows()); }
    int dim() const { return int(points.cols()); }
    double expanded_size() const {
        double s = 0;
        for (double m : multiplicity) s += m;
        return s;
    }
    bool has_token(int tok) const {
        for (int t : tokens)
            if (t == tok) return true;
        return false;
    }

    void validate() const {
        if (size() < 1) throw InvalidArgument("corpus: N must be >= 1");
        if (int(tokens.size()) != size() || int(multiplicity.size()) != size())
            throw InvalidArgument("corpus: tokens/multiplicity length mismatch");
        for (double m : multiplicity)
            if (!(m >= 1)) throw InvalidArgument("corpus: multiplicity must be >= 1");
        if (!points.allFinite()) throw InvalidArgument("corpus: non-finite point");
        for (int w : watchlist)
            if (w < 0 || w >= size()) throw InvalidArgument("corpus: watchlist id out of range");
    }
};

struct Duplication {
    int index = 0;
    double multiplicity = 1;
    std::optional<int> token;  // set to give the duplicate its own token
};

struct CorpusSpec {
    enum class Kind { Grid, GaussianMixture, File };
    Kind kind = Kind::GaussianMixture;
    int n = 256;
    int dim = 16;
    int tokens = 8;
    std::uint64_t seed = 0;
    // gaussian-mixture
    double cluster_spread = 0.5;  // std of cluster centres relative to within-cluster std 1
    double scale = 0.006;         // final per-coordinate scale
    bool shell = true;            // project rows to a common radius around the weighted mean
    // grid
    double grid_spacing = 1.0;
    // duplication: explicit rules, plus an optional "first point of every token" rule
    std::vector<Duplication> duplicates;
    double duplicate_per_token = 1;
    std::string file;
};

inline const char* to_string(CorpusSpec::Kind k) {
    switch (k) {
        case CorpusSpec::Kind::Grid: return "grid";
        case CorpusSpec::Kind::GaussianMixture: return "gaussian-mixture";
        case CorpusSpec::Kind::File: return "file";
    }
    return "?";
}

TrainingCorpus read_corpus_table(const std::string& path);

namespace detail {

/// Draws the mixture rows. Rows [0, n) carry tokens i % tokens; reference sets reuse this
/// with a different row offset so they come from the same distribution.
inline Mat mixture_rows(const CorpusSpec& s, int count, std::uint64_t stream, std::vector<int>* toks) {
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> nd;
    Mat centers(s.tokens, s.dim);
    for (int k = 0; k < s.tokens; ++k)
        for (int j = 0; j < s.dim; ++j) centers(k, j) = s.cluster_spread * nd(rng);
    std::seed_seq seq{std::uint32_t(s.seed), std::uint32_t(s.seed >> 32), std::uint32_t(stream), 0x5eedu};
    std::mt19937_64 rows_rng(seq);
    Mat g(count, s.dim);
    if (toks) toks->resize(count);
    for (int i = 0; i < count; ++i) {
        int tok = i % s.tokens;
        if (toks) (*toks)[i] = tok;
        for (int j = 0; j < s.dim; ++j) g(i, j) = centers(tok, j) + nd(rows_rng);
    }
    return g;
}

inline void project_to_shell(Mat& g, const std::vector<double>& w, bool center) {
    const double radius = std::sqrt(double(g.cols()));
    Eigen::Map<const Vec> wv(w.data(), Eigen::Index(w.size()));
    for (int it = 0; it < (center ? 50 : 1); ++it) {
        if (center) {
            Eigen::RowVectorXd mean = (wv.transpose() * g) / wv.sum();
            g.rowwise() -= mean;
        }
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double nrm = g.row(i).norm();
            if (nrm > 0) g.row(i) *= radius / nrm;
        }
    }
}

}  // namespace detail

inline TrainingCorpus build_corpus(const CorpusSpec& s) {
    TrainingCorpus c;
    if (s.kind == CorpusSpec::Kind::File) {
        if (s.file.empty()) throw InvalidArgument("corpus.file: path required for kind=file");
        c = read_corpus_table(s.file);
    } else {
        if (s.n < 1) throw InvalidArgument("corpus.n: must be >= 1");
        if (s.dim < 1) throw InvalidArgument("corpus.dim: must be >= 1");
        if (s.tokens < 1) throw InvalidArgument("corpus.tokens: must be >= 1");
        c.multiplicity.assign(s.n, 1.0);
        if (s.kind == CorpusSpec::Kind::Grid) {
            // n points on the lattice {0..side-1}^dim taken in lexicographic order
            int side = 1;
            while (std::pow(double(side), s.dim) < s.n) ++side;
            c.points.resize(s.n, s.dim);
            c.tokens.resize(s.n);
            for (int i = 0; i < s.n; ++i) {
                int r = i;
                for (int j = s.dim - 1; j >= 0; --j) {
                    c.points(i, j) = s.grid_spacing * (r % side);
                    r /= side;
                }
                c.tokens[i] = i % s.tokens;
            }
        } else {
            c.points = detail::mixture_rows(s, s.n, 0, &c.tokens);
        }
    }
    const int n = c.size();
    if (s.kind != CorpusSpec::Kind::File || s.duplicate_per_token != 1 || !s.duplicates.empty()) {
        if (c.multiplicity.empty()) c.multiplicity.assign(n, 1.0);
        if (s.duplicate_per_token != 1) {
            if (s.duplicate_per_token < 1) throw InvalidArgument("corpus.duplicate_per_token: must be >= 1");
            std::vector<bool> seen;
            for (int i = 0; i < n; ++i) {
                int tok = c.tokens[i];
                if (tok >= int(seen.size())) seen.resize(tok + 1, false);
                if (tok >= 0 && !seen[tok]) {
                    seen[tok] = true;
                    c.multiplicity[i] = s.duplicate_per_token;
                }
            }
        }
        for (const auto& d : s.duplicates) {
            if (d.index < 0 || d.index >= n) throw InvalidArgument("corpus.duplicates: index out of range");
            if (d.multiplicity < 1) throw InvalidArgument("corpus.duplicates: multiplicity must be >= 1");
            c.multiplicity[d.index] = d.multiplicity;
            if (d.token) c.tokens[d.index] = *d.token;
        }
    }
    if (s.kind == CorpusSpec::Kind::GaussianMixture) {
        if (s.shell) detail::project_to_shell(c.points, c.multiplicity, true);
        c.points *= s.scale;
    }
    c.validate();
    return c;
}

/// Held-out draw from the same mixture as the corpus (no duplication, no centring).
inline Mat reference_set(const CorpusSpec& s, int count) {
    if (s.kind != CorpusSpec::Kind::GaussianMixture)
        throw InvalidArgument("reference set requires a gaussian-mixture corpus");
    Mat g = detail::mixture_rows(s, count, 1, nullptr);
    if (s.shell) detail::project_to_shell(g, std::vector<double>(count, 1.0), false);
    return g * s.scale;
}

// Table format, one row per id:  id,token,multiplicity,x_0,...,x_{d-1}
// Header line "id,token,multiplicity,x0,..." is written and skipped on read.
// Rows of the watchlist are marked by a trailing "#watch" comment line: "#watch,<id>,<id>,...".

inline void write_corpus_table(std::ostream& os, const TrainingCorpus& c) {
    os << "id,token,multiplicity";
    for (int j = 0; j < c.dim(); ++j) os << ",x" << j;
    os << '\n' << std::setprecision(17);
    for (int i = 0; i < c.size(); ++i) {
        os << i << ',' << c.tokens[i] << ',' << c.multiplicity[i];
        for (int j = 0; j < c.dim(); ++j) os << ',' << c.points(i, j);
        os << '\n';
    }
    if (!c.watchlist.empty()) {
        os << "#watch";
        for (int w : c.watchlist) os << ',' << w;
        os << '\n';
    }
}

inline TrainingCorpus parse_corpus_table(std::istream& is) {
    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<int> toks;
    std::vector<double> mult;
    std::vector<int> watch;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("id,", 0) == 0) continue;
        std::stringstream ss(line);
        std::string cell;
        if (line.rfind("#watch", 0) == 0) {
            std::getline(ss, cell, ',');
            while (std::getline(ss, cell, ',')) watch.push_back(std::stoi(cell));
            continue;
        }
        std::vector<double> vals;
        try {
            while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw InvalidArgument("corpus table line " + std::to_string(lineno) + ": not numeric");
        }
        if (vals.size() < 4) throw InvalidArgument("corpus table line " + std::to_string(lineno) + ": too few columns");
        if (int(vals[0]) != int(rows.size()))
            throw InvalidArgument("corpus table line " + std::to_string(lineno) + ": ids must be 0..N-1 in order");
        toks.push_back(int(vals[1]));
        mult.push_back(vals[2]);
        rows.emplace_back(vals.begin() + 3, vals.end());
        if (rows.back().size() != rows.front().size())
            throw InvalidArgument("corpus table line " + std::to_string(lineno) + ": ragged row");
    }
    if (rows.empty()) throw InvalidArgument("corpus table: no rows");
    TrainingCorpus c;
    c.points.resize(Eigen::Index(rows.size()), Eigen::Index(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) c.points(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
    c.tokens = std::move(toks);
    c.multiplicity = std::move(mult);
    c.watchlist = std::move(watch);
    c.validate();
    return c;
}

inline TrainingCorpus read_corpus_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot open corpus file: " + path);
    return parse_corpus_table(f);
}

}  // namespace amg

#include "adpipe/contextual_ema.hpp"

#include <cstdio>
#include <fstream>

namespace adpipe::ema {

namespace {

void write_branch(std::ofstream& out, const char* tag, const adpipe::TensorD& m) {
    char buf[64];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out << tag << ',' << i;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), ",%.9g", m.at(i, c));
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace

void export_branch_vectors(const TensorD& raw, const TensorD& reconstructed,
                           const TensorD& attended, const std::string& path) {
    if (!raw.same_shape(reconstructed) || !raw.same_shape(attended))
        throw ShapeError("export_branch_vectors: branch shapes disagree");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write branch vectors: " + path);
    out << "branch,index";
    for (std::size_t c = 0; c < raw.cols(); ++c) out << ",c" << c;
    out << '\n';
    write_branch(out, "raw", raw);
    write_branch(out, "recon", reconstructed);
    write_branch(out, "attended", attended);
}

}  // namespace adpipe::ema

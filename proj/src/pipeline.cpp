#include "adpipe/pipeline.hpp"

#include <cstdio>
#include <fstream>

namespace adpipe::pipeline {

void write_stage2_loss_csv(const std::vector<Stage2StepLog>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write loss log: " + path);
    out << "epoch,step,L_auto,L_dist,L_II\n";
    char buf[128];
    for (const Stage2StepLog& row : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g,%.12g,%.12g\n", row.epoch, row.step,
                      row.auto_loss, row.dist_loss, row.total_loss);
        out << buf;
    }
}

}  // namespace adpipe::pipeline

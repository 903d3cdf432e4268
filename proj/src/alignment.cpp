#include "adpipe/alignment.hpp"

#include <cstdio>
#include <fstream>

namespace adpipe::align {

void write_stage1_loss_csv(const std::vector<StepLog>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write loss log: " + path);
    out << "epoch,step,L_g,L_f,L_I\n";
    char buf[128];
    for (const StepLog& row : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g,%.12g,%.12g\n", row.epoch, row.step,
                      row.global_loss, row.fine_loss, row.total_loss);
        out << buf;
    }
}

}  // namespace adpipe::align

#include "stjgcn/trainer.hpp"

#include <sstream>

namespace stjgcn {

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_mae,val_rmse,val_mape\n";
    for (auto& r : history)
        os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss)
           << ',' << format_double(r.val_mae) << ',' << format_double(r.val_rmse) << ','
           << format_double(r.val_mape) << "\n";
    return os.str();
}

}  // namespace stjgcn

#include "tvcm/losses.hpp"

namespace tvcm {

std::string to_string(LinkSpec link) {
  return link.kind == LinkKind::Log ? "log" : "identity";
}

std::string to_string(LossSpec loss) {
  return loss.kind == LossKind::PoissonDeviance ? "poisson" : "gaussian";
}

LinkSpec parse_link(std::string_view name) {
  if (name == "identity") return kIdentityLink;
  if (name == "log") return kLogLink;
  throw ContractError("unknown link '" + std::string(name) + "' (expected identity or log)");
}

LossSpec parse_loss(std::string_view name) {
  if (name == "gaussian") return kGaussianLoss;
  if (name == "poisson") return kPoissonLoss;
  throw ContractError("unknown loss '" + std::string(name) + "' (expected gaussian or poisson)");
}

void require_canonical_pair(LossSpec loss, LinkSpec link) {
  if (canonical_link(loss) != link) {
    throw ContractError("unsupported loss/link pairing " + to_string(loss) + "+" + to_string(link) +
                        "; only gaussian+identity and poisson+log are accepted");
  }
}

}  // namespace tvcm

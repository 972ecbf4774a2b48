#pragma once

#include "attackgan/common.hpp"
#include "attackgan/packet.hpp"
#include "attackgan/checkpoint.hpp"
#include "attackgan/adam.hpp"
#include "attackgan/pcap.hpp"
#include "attackgan/dataset.hpp"
#include "attackgan/embedding.hpp"
#include "attackgan/nids.hpp"
#include "attackgan/generator.hpp"
#include "attackgan/rollout.hpp"
#include "attackgan/discriminator.hpp"
#include "attackgan/metrics.hpp"
#include "attackgan/config.hpp"
#include "attackgan/manifest.hpp"
#include "attackgan/orchestrator.hpp"
#include "attackgan/png.hpp"
#include "attackgan/report.hpp"
#include "attackgan/cli.hpp"

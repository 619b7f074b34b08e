import tinyghost.physics
import tinyghost.optics
import tinyghost.scene
import tinyghost.simulator
import tinyghost.analysis

from event_detection.management.base import PipelineCommand
from labeling.interactors.transfer_interactor import TransferLabelsInteractor


class Command(PipelineCommand):
    help = 'Move frame-camera box labels onto the event camera clock and pixel grid'
    interactor_class = TransferLabelsInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('labels', type=str, help='Frame-camera .boxes.jsonl')
        parser.add_argument('--events', type=str, default=None, help='Event file (.evt)')
        parser.add_argument('--frames', type=str, default=None, help='Directory of <timestamp_us>.pgm frames')
        parser.add_argument('--sync', type=str, default=None, help='sync.json written by the sync command')
        parser.add_argument('--offset-us', type=int, default=None, help='Known clock offset in microseconds')
        parser.add_argument('--homography', type=str, default=None, help='Frame-to-event homography JSON')
        parser.add_argument('--correspondences', type=str, default=None,
                            help='CSV of x_src,y_src,x_dst,y_dst point pairs for RANSAC')
        parser.add_argument('--width', type=int, default=None, help='Event sensor width without --events')
        parser.add_argument('--height', type=int, default=None, help='Event sensor height without --events')
        parser.add_argument('--refine', action='store_true', help='Photometric refinement of the homography')

    def command_options(self, options):
        keys = ('labels', 'events', 'frames', 'sync', 'offset_us', 'homography', 'correspondences', 'width',
                'height', 'refine')
        return {key: options[key] for key in keys}
